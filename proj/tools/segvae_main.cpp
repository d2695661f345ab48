#include <iostream>

#include "segvae/cli/cli.hpp"

int main(int argc, char** argv) {
    return segvae::cli::dispatch(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
