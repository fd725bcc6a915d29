#include "lrrec/cli/workbench.hpp"

int main(int argc, char** argv) { return lrrec::cli::run(argc, argv); }
