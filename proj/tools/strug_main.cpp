#include <iostream>

#include "strug/cli.hpp"

int main(int argc, char** argv) {
    return strug::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
