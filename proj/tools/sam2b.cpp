#include <string>
#include <vector>

#include "sam2b/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return sam2b::cli::run(args);
}
