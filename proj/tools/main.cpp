#include "logitbal/cli.hpp"

int main(int argc, char** argv) { return logitbal::cli_dispatch(argc, argv); }
