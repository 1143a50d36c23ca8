#include <iostream>

#include "glyphforge/cli.hpp"

int main(int argc, char** argv) {
    return glyphforge::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
