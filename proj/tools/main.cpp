#include <iostream>
#include <string>
#include <vector>

#include "ovslink/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ovslink::cli::run_cli(args, std::cout, std::cerr);
}
