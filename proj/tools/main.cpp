#include "acr/cli_main.hpp"

int main(int argc, char** argv) { return acr::run_cli(argc, argv); }
