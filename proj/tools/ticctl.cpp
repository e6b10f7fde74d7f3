#include <iostream>

#include "tic/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return tic::run_cli(args, std::cout, std::cerr);
}
