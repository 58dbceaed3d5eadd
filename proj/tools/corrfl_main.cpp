#include <iostream>

#include "corrfl/cli.hpp"

int main(int argc, char** argv) {
    return corrfl::cli::run_main(argc, argv, std::cout, std::cerr);
}
