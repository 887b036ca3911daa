#include "ctmsr/evalcli.hpp"

int main(int argc, char** argv) { return ctmsr::cli_dispatch(argc, argv); }
