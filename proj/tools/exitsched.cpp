#include "exitsched/cli.hpp"

int main(int argc, char** argv) { return exitsched::cli::run(argc, argv); }
