#include <string>
#include <vector>

#include "muscl/harness.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return muscl::harness::run_cli(args);
}
