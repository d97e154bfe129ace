#include "humap/cli.hpp"

int main(int argc, char** argv) {
    return humap::cli::run(argc, argv);
}
