#include "region_styler/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return region_styler::run_cli(argc, argv, std::cout, std::cerr);
}
