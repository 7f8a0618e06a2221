#include <iostream>
#include <string>
#include <vector>

#include "ctr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return ctr::run_cli(args, std::cout, std::cerr);
}
