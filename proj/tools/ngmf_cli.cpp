#include <iostream>
#include <string>
#include <vector>

#include "ngmf/cli.h"

int main(int argc, char** argv) {
  return ngmf::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
