#include <iostream>
#include <string>
#include <vector>

#include "pcens/cli.hpp"
#include "pcens/runtime.hpp"

int main(int argc, char** argv) {
  pcens::tune_allocator();
  const std::vector<std::string> args(argv, argv + argc);
  return pcens::cli::run_main(args, std::cout, std::cerr);
}
