#include "hrd/cli.hpp"

int main(int argc, char** argv) { return hrd::cli::dispatch(argc, argv); }
