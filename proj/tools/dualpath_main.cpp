#include <iostream>

#include "dualpath/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dualpath::run_cli(args, std::cout, std::cerr);
}
