#include "fdsm/errors.hpp"
#include "fdsm/tensor.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

using namespace fdsm;

TEST_CASE("tensor construction and element access") {
    Tensor t({2, 3, 4});
    REQUIRE(t.size() == 24);
    REQUIRE(t.rank() == 3);
    t.at(1, 2, 3) = 5.0;
    REQUIRE(t[23] == 5.0);
    REQUIRE_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0, 2.0}), ShapeError);
}

TEST_CASE("elementwise arithmetic checks shapes") {
    const Tensor a({2}, {1.0, 2.0});
    const Tensor b({2}, {3.0, 5.0});
    REQUIRE((a + b) == Tensor({2}, {4.0, 7.0}));
    REQUIRE((b - a) == Tensor({2}, {2.0, 3.0}));
    REQUIRE((a * b) == Tensor({2}, {3.0, 10.0}));
    REQUIRE((2.0 * a) == Tensor({2}, {2.0, 4.0}));
    REQUIRE(sum_squares(b) == 34.0);
    REQUIRE_THROWS_AS(a + Tensor({3}), ShapeError);
}

TEST_CASE("stack and unstack are inverse") {
    const Tensor a({2, 2}, {1, 2, 3, 4});
    const Tensor b({2, 2}, {5, 6, 7, 8});
    const Tensor items[] = {a, b};
    const Tensor s = stack(items);
    REQUIRE(s.shape() == Shape{2, 2, 2});
    REQUIRE(unstack(s, 0) == a);
    REQUIRE(unstack(s, 1) == b);
    const Tensor mismatched[] = {a, Tensor({4})};
    REQUIRE_THROWS_AS(stack(mismatched), ShapeError);
}

TEST_CASE("reshape keeps data and validates size") {
    const Tensor a({2, 3}, {0, 1, 2, 3, 4, 5});
    REQUIRE(a.reshaped({3, 2}).values() == a.values());
    REQUIRE_THROWS_AS(a.reshaped({4}), ShapeError);
}

TEST_CASE("finiteness check") {
    Tensor a({2});
    REQUIRE(a.all_finite());
    a[1] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_FALSE(a.all_finite());
}

TEST_CASE("parameter set keeps insertion order and rejects duplicates") {
    ParameterSet p;
    p.add("z", Tensor({1}));
    p.add("a", Tensor({2, 2}));
    std::vector<std::string> names;
    for (const auto& [name, value] : p) names.push_back(name);
    REQUIRE(names == std::vector<std::string>{"z", "a"});
    REQUIRE(p.scalar_count() == 5);
    REQUIRE_THROWS(p.add("z", Tensor({1})));
    const ParameterSet zeros = p.zeros_like();
    REQUIRE(zeros.at("a") == Tensor({2, 2}));
}
