#include <iostream>
#include <string>
#include <vector>

#include "satmap/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return satmap::cli::dispatch(args, std::cout, std::cerr);
}
