#include <string>
#include <vector>

#include "camlab/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return camlab::cli::run(std::move(args));
}
