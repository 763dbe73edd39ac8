#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "sphere_ssm/runtime.hpp"

int main(int argc, char** argv) {
    sphere_ssm::runtime_init(argc, argv);
    return doctest::Context(argc, argv).run();
}
