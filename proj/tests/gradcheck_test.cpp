#include <gtest/gtest.h>

#include "ctpnet/gradcheck.hpp"

// The acceptance suite runs the full 20-instance battery; here a smaller
// pass keeps the unit suite quick while still covering every op.
TEST(GradCheck, BatteryPasses) {
    auto results = ctpnet::gradcheck_battery(1234, 5);
    ASSERT_FALSE(results.empty());
    bool saw_conv = false, saw_bn = false, saw_ce = false;
    for (const auto& r : results) {
        EXPECT_TRUE(r.passed()) << r.name << ": " << r.failed << "/" << r.checked
                                << " failed, max rel err " << r.max_rel_err;
        saw_conv = saw_conv || r.name == "conv2d";
        saw_bn = saw_bn || r.name == "batch_norm";
        saw_ce = saw_ce || r.name == "cross_entropy_loss";
    }
    EXPECT_TRUE(saw_conv);
    EXPECT_TRUE(saw_bn);
    EXPECT_TRUE(saw_ce);
}

TEST(GradCheck, DetectsBrokenGradient) {
    // sanity: a deliberately wrong analytic gradient must be flagged
    using namespace ctpnet;
    auto x = Tensor<double>::from_data({3}, {0.5, -1.0, 2.0}, true);
    auto fwd = [&](Graph<double>* g) {
        auto y = relu(g, x);
        if (g) {
            // inject an extra bogus backward step
            Tensor<double> xl = x;
            g->record([xl]() mutable { xl.grad()[0] += 0.5; });
        }
        return sum(g, y);
    };
    auto r = check_gradients("broken", fwd, {x});
    EXPECT_GT(r.failed, 0);
}
