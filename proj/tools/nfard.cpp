#include <string>
#include <vector>

#include <nfard/cli.hpp>

int main(int argc, char** argv) {
  return nfard::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
