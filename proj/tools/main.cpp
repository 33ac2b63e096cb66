#include "cli.hpp"

int main(int argc, char** argv) { return dynhd::cli::dispatch(argc, argv); }
