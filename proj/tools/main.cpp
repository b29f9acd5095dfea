#include <iostream>

#include "mrefine/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mrefine::cli_main(args, std::cout, std::cerr);
}
