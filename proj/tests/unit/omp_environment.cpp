#include <gtest/gtest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

// Several threads even on a single-core runner, so the parallel kernels take
// their parallel branch and are compared against the serial references.
class ThreadEnvironment : public ::testing::Environment {
public:
    void SetUp() override {
#ifdef _OPENMP
        omp_set_num_threads(4);
#endif
    }
};

const auto* const registered = ::testing::AddGlobalTestEnvironment(new ThreadEnvironment);

}  // namespace
