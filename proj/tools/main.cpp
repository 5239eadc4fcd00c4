#include "viewset/cli.hpp"

int main(int argc, char** argv) { return viewset::run_cli(argc, argv); }
