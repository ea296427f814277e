#include <iostream>
#include <string>
#include <vector>

#include "deformreg/cli.hpp"

int main(int argc, char** argv) {
    return deformreg::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
