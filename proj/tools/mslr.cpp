#include <iostream>

#include "mslr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mslr::run_cli(args, std::cout, std::cerr);
}
