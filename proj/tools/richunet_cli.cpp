#include <iostream>

#include "richunet/cli.hpp"

int main(int argc, char** argv) {
  return richunet::run_cli({argv, argv + argc}, std::cout, std::cerr);
}
