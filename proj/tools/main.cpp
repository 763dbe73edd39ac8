#include <cstdio>

#include "sphere_ssm/runtime.hpp"

int main(int argc, char** argv) {
    sphere_ssm::runtime_init(argc, argv);
    std::printf("sphere-ssm: subcommands not wired yet\n");
    return 0;
}
