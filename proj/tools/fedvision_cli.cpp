#include <fedvision/cli.hpp>

int main(int argc, char** argv) { return fedvision::cli::run_cli(argc, argv); }
