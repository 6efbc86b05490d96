#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "cq/error.hpp"
#include "cq/geometry.hpp"
#include "cq/rng.hpp"
#include "doctest.h"

using cq::Grid2D;
using cq::IndexVector;
using cq::kBackground;
using cq::kCavity;
using cq::kMyocardium;
using cq::MaskSequence;

namespace {

// Independent connected-components oracle built on union-find; the library
// implementation uses breadth-first flood fill instead.
struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

Grid2D oracle_largest_component(const Grid2D& mask, int connectivity) {
  const std::size_t h = mask.height, w = mask.width;
  UnionFind uf(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (mask.at(y, x) == 0) continue;
      const bool diag = connectivity == 8;
      if (x + 1 < w && mask.at(y, x + 1)) uf.unite(y * w + x, y * w + x + 1);
      if (y + 1 < h && mask.at(y + 1, x)) uf.unite(y * w + x, (y + 1) * w + x);
      if (diag && y + 1 < h && x + 1 < w && mask.at(y + 1, x + 1)) {
        uf.unite(y * w + x, (y + 1) * w + x + 1);
      }
      if (diag && y + 1 < h && x > 0 && mask.at(y + 1, x - 1)) {
        uf.unite(y * w + x, (y + 1) * w + x - 1);
      }
    }
  }
  std::vector<std::size_t> size(h * w, 0), first(h * w, h * w);
  for (std::size_t p = 0; p < h * w; ++p) {
    if (mask.data[p] == 0) continue;
    const std::size_t r = uf.find(p);
    ++size[r];
    first[r] = std::min(first[r], p);
  }
  std::size_t best = h * w;
  for (std::size_t r = 0; r < h * w; ++r) {
    if (size[r] == 0) continue;
    if (best == h * w || size[r] > size[best] ||
        (size[r] == size[best] && first[r] < first[best])) {
      best = r;
    }
  }
  Grid2D out(h, w);
  if (best < h * w) {
    for (std::size_t p = 0; p < h * w; ++p) {
      out.data[p] = mask.data[p] != 0 && uf.find(p) == best ? 1 : 0;
    }
  }
  return out;
}

// Pixel-center rasterization shared with nothing in the library.
Grid2D disc_mask(std::size_t n, double cy, double cx, double r) {
  Grid2D g(n, n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      if (dy * dy + dx * dx <= r * r) g.at(y, x) = 1;
    }
  }
  return g;
}

Grid2D annulus_labels(std::size_t n, double cy, double cx, double inner, double outer) {
  Grid2D g(n, n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double d = std::sqrt(dy * dy + dx * dx);
      if (d <= inner) {
        g.at(y, x) = kCavity;
      } else if (d <= outer) {
        g.at(y, x) = kMyocardium;
      }
    }
  }
  return g;
}

// Angle of a pixel in the ray convention (counterclockwise, y up), degrees.
double pixel_angle(double cy, double cx, std::size_t y, std::size_t x) {
  const double u = static_cast<double>(x) - cx;
  const double v = cy - static_cast<double>(y);
  double a = std::atan2(v, u) * 180.0 / std::numbers::pi;
  if (a < 0) a += 360.0;
  return a;
}

Grid2D ellipse_cavity(std::size_t n, double cy, double cx, double a, double b, double phi_deg) {
  Grid2D g(n, n);
  const double phi = phi_deg * std::numbers::pi / 180.0;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double u = static_cast<double>(x) - cx;
      const double v = cy - static_cast<double>(y);
      const double p = (u * std::cos(phi) + v * std::sin(phi)) / a;
      const double q = (-u * std::sin(phi) + v * std::cos(phi)) / b;
      if (p * p + q * q <= 1.0) g.at(y, x) = kCavity;
    }
  }
  return g;
}

MaskSequence two_frame_annuli(double spacing) {
  MaskSequence seq;
  seq.frames = 2;
  seq.height = seq.width = 41;
  seq.pixel_spacing = spacing;
  const Grid2D big = annulus_labels(41, 20, 20, 8, 12);
  const Grid2D small = annulus_labels(41, 20, 20, 5, 10);
  seq.labels.insert(seq.labels.end(), big.data.begin(), big.data.end());
  seq.labels.insert(seq.labels.end(), small.data.begin(), small.data.end());
  return seq;
}

}  // namespace

TEST_SUITE("geometry-quant") {

TEST_CASE("largest component hand cases") {
  SUBCASE("single blob unchanged") {
    Grid2D m(5, 5);
    m.at(1, 1) = m.at(1, 2) = m.at(2, 1) = m.at(2, 2) = 1;
    const Grid2D out = cq::keep_largest_component(m);
    CHECK(out.data == m.data);
  }
  SUBCASE("speck removed") {
    Grid2D m(12, 12);
    for (std::size_t y = 1; y < 6; ++y) {
      for (std::size_t x = 1; x < 11; ++x) m.at(y, x) = 1;  // 50-pixel blob
    }
    m.at(9, 9) = m.at(9, 10) = 1;  // 2-pixel speck
    const Grid2D out = cq::keep_largest_component(m);
    CHECK(out.at(2, 2) == 1);
    CHECK(out.at(9, 9) == 0);
    CHECK(out.at(9, 10) == 0);
  }
  SUBCASE("diagonal touch differs between 4- and 8-connectivity") {
    Grid2D m(4, 5);
    m.at(0, 0) = m.at(0, 1) = m.at(0, 2) = m.at(1, 0) = m.at(1, 1) = 1;  // component A
    m.at(2, 2) = m.at(2, 3) = m.at(2, 4) = m.at(3, 2) = m.at(3, 3) = 1;  // component B
    const Grid2D joined = cq::keep_largest_component(m, 8);
    CHECK(std::count(joined.data.begin(), joined.data.end(), 1) == 10);
    const Grid2D split = cq::keep_largest_component(m, 4);
    CHECK(std::count(split.data.begin(), split.data.end(), 1) == 5);
    CHECK(split.at(0, 0) == 1);  // tie broken toward the smaller top-left index
    CHECK(split.at(2, 2) == 0);
  }
  SUBCASE("empty stays empty") {
    const Grid2D out = cq::keep_largest_component(Grid2D(3, 3));
    CHECK(std::count(out.data.begin(), out.data.end(), 1) == 0);
  }
}

TEST_CASE("largest component matches union-find oracle") {
  cq::Rng rng(51);
  for (int trial = 0; trial < 25; ++trial) {
    Grid2D m(14, 17);
    for (std::uint8_t& v : m.data) v = rng.uniform() < 0.42 ? 1 : 0;
    for (int connectivity : {4, 8}) {
      const Grid2D got = cq::keep_largest_component(m, connectivity);
      const Grid2D want = oracle_largest_component(m, connectivity);
      CHECK(got.data == want.data);
    }
  }
}

TEST_CASE("region area") {
  CHECK(cq::region_area(Grid2D(8, 8), kCavity, 1.0) == doctest::Approx(0.0));

  Grid2D ten(5, 5);
  for (std::size_t x = 0; x < 5; ++x) ten.at(0, x) = ten.at(1, x) = kCavity;
  CHECK(cq::region_area(ten, kCavity, 2.0) == doctest::Approx(40.0));

  const Grid2D disc = disc_mask(41, 20, 20, 10);
  const auto count = static_cast<double>(std::count(disc.data.begin(), disc.data.end(), 1));
  CHECK(cq::region_area(disc, 1, 1.0) == doctest::Approx(count));
  CHECK(count == doctest::Approx(std::numbers::pi * 100.0).epsilon(0.07));
}

TEST_CASE("cavity dimensions") {
  SUBCASE("centered disc gives its diameter in all three directions") {
    const Grid2D disc = disc_mask(41, 20, 20, 10);
    const auto dims = cq::cavity_dimensions(disc, 1.0);
    for (double d : dims) CHECK(d == doctest::Approx(20.0).epsilon(0.055));
    const auto dims_mm = cq::cavity_dimensions(disc, 1.5);
    for (int i = 0; i < 3; ++i) CHECK(dims_mm[i] == doctest::Approx(dims[i] * 1.5));
  }
  SUBCASE("single pixel stays under sqrt(2)") {
    Grid2D m(11, 11);
    m.at(5, 5) = kCavity;
    for (double d : cq::cavity_dimensions(m, 1.0)) {
      CHECK(d <= std::sqrt(2.0) + 1e-9);
    }
  }
  SUBCASE("rotating an ellipse by 60 degrees permutes the dimensions cyclically") {
    const auto base = cq::cavity_dimensions(ellipse_cavity(61, 30, 30, 14, 8, 15.0), 1.0);
    const auto rotated = cq::cavity_dimensions(ellipse_cavity(61, 30, 30, 14, 8, 75.0), 1.0);
    CHECK(rotated[1] == doctest::Approx(base[0]).epsilon(0.09));
    CHECK(rotated[2] == doctest::Approx(base[1]).epsilon(0.09));
    CHECK(rotated[0] == doctest::Approx(base[2]).epsilon(0.09));
  }
  SUBCASE("empty cavity is a degenerate error") {
    try {
      cq::cavity_dimensions(Grid2D(9, 9), 1.0);
      FAIL("expected an error");
    } catch (const cq::Error& e) {
      CHECK(e.code() == cq::ErrorCode::kDegenerate);
    }
  }
}

TEST_CASE("regional wall thickness") {
  SUBCASE("perfect annulus is uniform") {
    const Grid2D ring = annulus_labels(41, 20, 20, 6, 10);
    const auto rwt = cq::regional_wall_thickness(ring, 1.0);
    for (double t : rwt) CHECK(t == doctest::Approx(4.0).epsilon(0.26));
  }
  SUBCASE("sector-3 bump raises RWT3 only") {
    Grid2D ring = annulus_labels(61, 30, 30, 8, 12);
    // Thicken the wall to radius 15 inside the inferolateral sector [210, 270).
    for (std::size_t y = 0; y < 61; ++y) {
      for (std::size_t x = 0; x < 61; ++x) {
        const double dy = static_cast<double>(y) - 30, dx = static_cast<double>(x) - 30;
        const double d = std::sqrt(dy * dy + dx * dx);
        const double ang = pixel_angle(30, 30, y, x);
        if (d > 12 && d <= 15 && ang >= 210.0 && ang < 270.0) {
          ring.at(y, x) = kMyocardium;
        }
      }
    }
    const auto rwt = cq::regional_wall_thickness(ring, 1.0);
    double others = 0.0;
    for (int k = 0; k < 6; ++k) {
      if (k != 2) others += rwt[k];
    }
    others /= 5.0;
    CHECK(rwt[2] - others == doctest::Approx(3.0).epsilon(0.35));
  }
  SUBCASE("broken ring reports the gap angle") {
    Grid2D ring = annulus_labels(41, 20, 20, 6, 10);
    for (std::size_t y = 0; y < 41; ++y) {
      for (std::size_t x = 0; x < 41; ++x) {
        if (ring.at(y, x) == kMyocardium) {
          const double ang = pixel_angle(20, 20, y, x);
          if (ang < 30.0) ring.at(y, x) = kBackground;
        }
      }
    }
    try {
      cq::regional_wall_thickness(ring, 1.0);
      FAIL("expected an error");
    } catch (const cq::Error& e) {
      CHECK(e.code() == cq::ErrorCode::kDegenerate);
      CHECK(std::string(e.what()).find("degrees") != std::string::npos);
    }
  }
  SUBCASE("missing myocardium is an error") {
    const Grid2D cavity_only = disc_mask(21, 10, 10, 5);
    CHECK_THROWS_AS(cq::regional_wall_thickness(cavity_only, 1.0), cq::Error);
  }
}

TEST_CASE("phase labels") {
  SUBCASE("cosine ramp peaking at frame 0, trough at 10") {
    std::vector<double> areas(20);
    for (int t = 0; t < 20; ++t) {
      areas[t] = 100.0 + 50.0 * std::cos(2.0 * std::numbers::pi * t / 20.0);
    }
    const std::vector<int> labels = cq::derive_phase_labels(areas);
    CHECK(labels[0] == 1);
    for (int t = 1; t <= 10; ++t) CHECK(labels[t] == 0);
    for (int t = 11; t < 20; ++t) CHECK(labels[t] == 1);
  }
  SUBCASE("two frames") {
    CHECK(cq::derive_phase_labels({5.0, 1.0}) == std::vector<int>{1, 0});
  }
  SUBCASE("constant series is degenerate") {
    CHECK_THROWS_AS(cq::derive_phase_labels(std::vector<double>(5, 3.0)), cq::Error);
  }
  SUBCASE("exactly one transition each way, cyclically") {
    cq::Rng rng(57);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> areas(12);
      for (double& a : areas) a = rng.uniform(10.0, 200.0);
      const std::vector<int> labels = cq::derive_phase_labels(areas);
      int down = 0, up = 0;
      for (std::size_t t = 0; t < labels.size(); ++t) {
        const int a = labels[t], b = labels[(t + 1) % labels.size()];
        down += a == 1 && b == 0 ? 1 : 0;
        up += a == 0 && b == 1 ? 1 : 0;
      }
      CHECK(down == 1);
      CHECK(up == 1);
    }
  }
}

TEST_CASE("quantify_sequence") {
  SUBCASE("pairwise duplication repeats indices") {
    MaskSequence seq = two_frame_annuli(1.0);
    MaskSequence doubled;
    doubled.frames = 4;
    doubled.height = doubled.width = 41;
    doubled.pixel_spacing = 1.0;
    const std::size_t plane = 41 * 41;
    for (std::size_t t = 0; t < 2; ++t) {
      for (int rep = 0; rep < 2; ++rep) {
        doubled.labels.insert(doubled.labels.end(), seq.labels.begin() + t * plane,
                              seq.labels.begin() + (t + 1) * plane);
      }
    }
    const auto once = cq::quantify_sequence(seq);
    const auto twice = cq::quantify_sequence(doubled);
    REQUIRE(twice.size() == 4);
    for (std::size_t t = 0; t < 2; ++t) {
      CHECK(twice[2 * t].values() == once[t].values());
      CHECK(twice[2 * t + 1].values() == once[t].values());
    }
  }
  SUBCASE("identical input gives bit-identical output") {
    const MaskSequence seq = two_frame_annuli(1.25);
    const auto a = cq::quantify_sequence(seq);
    const auto b = cq::quantify_sequence(seq);
    REQUIRE(a.size() == b.size());
    for (std::size_t t = 0; t < a.size(); ++t) {
      CHECK(a[t].values() == b[t].values());
      CHECK(a[t].phase == b[t].phase);
    }
  }
  SUBCASE("scale covariance in pixel spacing") {
    const auto at1 = cq::quantify_sequence(two_frame_annuli(1.0));
    const auto at2 = cq::quantify_sequence(two_frame_annuli(2.0));
    for (std::size_t t = 0; t < 2; ++t) {
      CHECK(at2[t].cavity_area == doctest::Approx(4.0 * at1[t].cavity_area).epsilon(1e-12));
      CHECK(at2[t].myo_area == doctest::Approx(4.0 * at1[t].myo_area).epsilon(1e-12));
      for (int i = 0; i < 3; ++i) {
        CHECK(at2[t].dimensions[i] == doctest::Approx(2.0 * at1[t].dimensions[i]).epsilon(1e-12));
      }
      for (int i = 0; i < 6; ++i) {
        CHECK(at2[t].rwt[i] == doctest::Approx(2.0 * at1[t].rwt[i]).epsilon(1e-12));
      }
    }
  }
  SUBCASE("180-degree rotation preserves areas exactly and chords approximately") {
    const MaskSequence seq = two_frame_annuli(1.0);
    MaskSequence rotated = seq;
    const std::size_t plane = 41 * 41;
    for (std::size_t t = 0; t < 2; ++t) {
      std::reverse(rotated.labels.begin() + t * plane, rotated.labels.begin() + (t + 1) * plane);
    }
    const auto a = cq::quantify_sequence(seq);
    const auto b = cq::quantify_sequence(rotated);
    for (std::size_t t = 0; t < 2; ++t) {
      CHECK(b[t].cavity_area == a[t].cavity_area);
      CHECK(b[t].myo_area == a[t].myo_area);
      for (int i = 0; i < 3; ++i) {
        CHECK(b[t].dimensions[i] == doctest::Approx(a[t].dimensions[i]).epsilon(0.06));
      }
    }
  }
  SUBCASE("cleanup drops stray specks before measuring") {
    MaskSequence seq = two_frame_annuli(1.0);
    seq.labels[3] = kCavity;   // far-corner cavity speck, frame 0
    seq.labels[45] = kMyocardium;
    const auto cleaned = cq::quantify_sequence(seq);
    const auto reference = cq::quantify_sequence(two_frame_annuli(1.0));
    CHECK(cleaned[0].cavity_area == reference[0].cavity_area);
    CHECK(cleaned[0].myo_area == reference[0].myo_area);
  }
  SUBCASE("all-background names the offending frame") {
    MaskSequence empty;
    empty.frames = 2;
    empty.height = empty.width = 16;
    empty.labels.assign(2 * 16 * 16, 0);
    empty.pixel_spacing = 1.0;
    try {
      cq::quantify_sequence(empty);
      FAIL("expected an error");
    } catch (const cq::Error& e) {
      CHECK(std::string(e.what()).find("frame 0") != std::string::npos);
    }
  }
  SUBCASE("labels outside {0,1,2} are rejected") {
    MaskSequence bad = two_frame_annuli(1.0);
    bad.labels[0] = 7;
    CHECK_THROWS_AS(cq::quantify_sequence(bad), cq::Error);
  }
}

TEST_CASE("target normalization") {
  SUBCASE("hand z-score of [1,2,3] with population std") {
    std::vector<IndexVector> train(3);
    for (int i = 0; i < 3; ++i) {
      std::array<double, 11> v{};
      v.fill(static_cast<double>(i + 1));
      train[i].set_values(v);
    }
    const cq::NormalizationStats stats = cq::compute_normalization_stats(train);
    CHECK(stats.mean[0] == doctest::Approx(2.0));
    CHECK(stats.stddev[0] == doctest::Approx(std::sqrt(2.0 / 3.0)));
    const auto z = cq::normalize_targets(train[0].values(), stats);
    CHECK(z[0] == doctest::Approx(-1.2247).epsilon(1e-4));
    const auto z2 = cq::normalize_targets(train[2].values(), stats);
    CHECK(z2[0] == doctest::Approx(1.2247).epsilon(1e-4));
  }
  SUBCASE("round trip is the identity") {
    cq::Rng rng(61);
    std::vector<IndexVector> train(8);
    for (IndexVector& iv : train) {
      std::array<double, 11> v{};
      for (double& x : v) x = rng.uniform(1.0, 300.0);
      iv.set_values(v);
    }
    const cq::NormalizationStats stats = cq::compute_normalization_stats(train);
    for (const IndexVector& iv : train) {
      const auto z = cq::normalize_targets(iv.values(), stats);
      const auto back = cq::denormalize_targets(z, stats);
      const auto orig = iv.values();
      for (std::size_t i = 0; i < 11; ++i) {
        CHECK(back[i] == doctest::Approx(orig[i]).epsilon(1e-6));
      }
    }
  }
  SUBCASE("constant column refuses to normalize") {
    std::vector<IndexVector> train(4);
    for (IndexVector& iv : train) {
      std::array<double, 11> v{};
      v.fill(5.0);
      iv.set_values(v);
    }
    const cq::NormalizationStats stats = cq::compute_normalization_stats(train);
    CHECK_THROWS_AS(cq::normalize_targets(train[0].values(), stats), cq::Error);
  }
}

}  // TEST_SUITE
