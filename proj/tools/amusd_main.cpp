#include <iostream>

#include "amusd/cli.hpp"

int main(int argc, char** argv) {
    return amusd::cli::run_cli(argc, argv, std::cout, std::cerr);
}
