#include <iostream>
#include <string>
#include <vector>

#include "mvla/cli.hpp"

int main(int argc, char** argv) {
    return mvla::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
