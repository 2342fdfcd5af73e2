#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "fusenet/error.hpp"
#include "fusenet/kernels.hpp"
#include "fusenet/rng.hpp"

using namespace fusenet;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-3.0, 3.0);
    return v;
}

// exercises the vector body and every tail length
const std::size_t kSizes[] = {1, 2, 3, 4, 5, 7, 8, 15, 16, 17, 64, 100, 1023};

}  // namespace

TEST_CASE("scalar and avx2 elementwise kernels agree bitwise") {
    if (!kern::avx2_supported()) return;
    const kern::Ops& s = kern::scalar_ops();
    const kern::Ops& v = kern::avx2_ops();
    Rng rng(42);
    for (std::size_t n : kSizes) {
        const auto a = random_vec(n, rng);
        const auto b = random_vec(n, rng);
        std::vector<double> ys(n), yv(n);

        s.add(a.data(), b.data(), ys.data(), n);
        v.add(a.data(), b.data(), yv.data(), n);
        CHECK(ys == yv);

        s.sub(a.data(), b.data(), ys.data(), n);
        v.sub(a.data(), b.data(), yv.data(), n);
        CHECK(ys == yv);

        s.mul(a.data(), b.data(), ys.data(), n);
        v.mul(a.data(), b.data(), yv.data(), n);
        CHECK(ys == yv);

        s.scale(a.data(), 1.7, ys.data(), n);
        v.scale(a.data(), 1.7, yv.data(), n);
        CHECK(ys == yv);

        s.relu(a.data(), ys.data(), n);
        v.relu(a.data(), yv.data(), n);
        CHECK(ys == yv);

        ys = b;
        yv = b;
        s.axpy(-0.37, a.data(), ys.data(), n);
        v.axpy(-0.37, a.data(), yv.data(), n);
        CHECK(ys == yv);

        ys = b;
        yv = b;
        s.mul_acc(a.data(), b.data(), ys.data(), n);
        v.mul_acc(a.data(), b.data(), yv.data(), n);
        CHECK(ys == yv);

        ys = b;
        yv = b;
        s.relu_grad_acc(a.data(), b.data(), ys.data(), n);
        v.relu_grad_acc(a.data(), b.data(), yv.data(), n);
        CHECK(ys == yv);
    }
}

TEST_CASE("scalar and avx2 matmul agree bitwise") {
    if (!kern::avx2_supported()) return;
    const kern::Ops& s = kern::scalar_ops();
    const kern::Ops& v = kern::avx2_ops();
    Rng rng(7);
    const std::size_t dims[][3] = {{1, 1, 1}, {2, 3, 4},  {3, 4, 2},   {5, 5, 5},
                                   {7, 9, 3}, {8, 16, 4}, {13, 6, 17}, {32, 32, 33}};
    for (const auto& d : dims) {
        const std::size_t m = d[0], k = d[1], n = d[2];
        const auto a = random_vec(m * k, rng);
        const auto b = random_vec(k * n, rng);
        auto cs = random_vec(m * n, rng);  // accumulate onto nonzero contents
        auto cv = cs;
        s.matmul_acc(a.data(), b.data(), cs.data(), m, k, n);
        v.matmul_acc(a.data(), b.data(), cv.data(), m, k, n);
        CHECK(cs == cv);
    }
}

TEST_CASE("matmul_acc accumulates the standard product") {
    const kern::Ops& k = kern::active();
    // [[1,2],[3,4]] * [[0],[1]] = [[2],[4]]
    const double a[] = {1, 2, 3, 4};
    const double b[] = {0, 1};
    double c[] = {0, 0};
    k.matmul_acc(a, b, c, 2, 2, 1);
    CHECK(c[0] == 2.0);
    CHECK(c[1] == 4.0);
    // accumulating again doubles it
    k.matmul_acc(a, b, c, 2, 2, 1);
    CHECK(c[0] == 4.0);
    CHECK(c[1] == 8.0);
}

TEST_CASE("relu kernel clamps negatives and zero stays zero") {
    const kern::Ops& k = kern::active();
    const double x[] = {-1.0, 0.0, 2.0};
    double y[3];
    k.relu(x, y, 3);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
    CHECK(y[2] == 2.0);
}

TEST_CASE("transpose round trip") {
    Rng rng(3);
    const auto a = random_vec(6 * 4, rng);
    std::vector<double> at(4 * 6), back(6 * 4);
    kern::transpose(a.data(), at.data(), 6, 4);
    kern::transpose(at.data(), back.data(), 4, 6);
    CHECK(a == back);
    CHECK(at[0 * 6 + 2] == a[2 * 4 + 0]);
}

TEST_CASE("backend selection is sticky and validated") {
    const kern::Backend prev = kern::selected();
    kern::select(kern::Backend::scalar);
    CHECK(std::string(kern::active().name) == "scalar");
    if (kern::avx2_supported()) {
        kern::select(kern::Backend::avx2);
        CHECK(std::string(kern::active().name) == "avx2");
    }
    CHECK_THROWS_AS(kern::parse_backend("sse9"), ConfigError);
    kern::select(prev);
}
