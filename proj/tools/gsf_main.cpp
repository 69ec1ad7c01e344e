#include <iostream>
#include <string>
#include <vector>

#include "gsf/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return gsf::cli::run(args, std::cout, std::cerr);
}
