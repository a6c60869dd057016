#include "cli_app.hpp"

int main(int argc, char** argv) { return crowdmr::cli::run(argc, argv); }
