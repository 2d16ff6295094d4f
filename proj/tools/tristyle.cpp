#include <iostream>
#include <string>
#include <vector>

#include "tristyle/cli.hpp"

int main(int argc, char** argv) {
  return tristyle::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
