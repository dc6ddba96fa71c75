#include "vg3d/cli.hpp"

int main(int argc, char** argv) { return vg3d::cli::run(argc, argv); }
