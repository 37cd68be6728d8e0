#include "denoise4d/cli.hpp"

int main(int argc, char** argv) { return denoise4d::cli::run_cli(argc, argv); }
