#include <iostream>
#include <string>
#include <vector>

#include "psp/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return psp::cli::run(args, std::cout, std::cerr);
}
