#include <catch2/catch_amalgamated.hpp>

#include "cplink/cplink.hpp"
#include "oracles.hpp"

using cplink::CannotLinkMatrix;
using cplink::Corpus;
using cplink::Index;
using cplink::UndefinedLift;

namespace {

using Docs = std::vector<std::vector<std::string>>;

Corpus two_term_corpus(const Docs& docs) {
  return Corpus::from_tokens({"j"}, {"k"}, docs);
}

}  // namespace

TEST_CASE("corpus construction validates vocabularies and documents") {
  CHECK_THROWS_AS(Corpus::from_tokens({}, {"k"}, {{}}), cplink::validation_error);
  CHECK_THROWS_AS(Corpus::from_tokens({"j"}, {}, {{}}), cplink::validation_error);
  CHECK_THROWS_AS(Corpus::from_tokens({"j"}, {"k"}, {}), cplink::validation_error);
  CHECK_THROWS_AS(Corpus::from_tokens({"j", "j"}, {"k"}, {{}}), cplink::validation_error);
  CHECK_THROWS_AS(Corpus::from_tokens({"j"}, {"j"}, {{}}), cplink::validation_error);
  CHECK_THROWS_WITH(Corpus::from_tokens({"j"}, {"k"}, {{"zzz"}}),
                    Catch::Matchers::ContainsSubstring("zzz"));

  // duplicate mentions inside a document collapse to presence
  const auto c = two_term_corpus({{"j", "j", "k"}});
  REQUIRE(c.docs().size() == 1);
  CHECK(c.docs()[0] == std::vector<Index>{0, 1});
}

TEST_CASE("lift hand count: independence gives lift one") {
  // docs {j,k}, {j}, {k}, {}
  const auto c = two_term_corpus({{"j", "k"}, {"j"}, {"k"}, {}});
  const auto lifts = cplink::compute_lift(c);
  CHECK(lifts.n_docs() == 4);
  CHECK(lifts.row_count(0) == 2);
  CHECK(lifts.col_count(0) == 2);
  const auto l = lifts.lift(0, 0);
  REQUIRE(l.has_value());
  CHECK(*l == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("lift hand count: enriched co-occurrence") {
  // 10 docs, j in 2, k in 5, both in 2 -> lift = 10*2/(2*5) = 2
  Docs docs;
  docs.push_back({"j", "k"});
  docs.push_back({"j", "k"});
  for (int n = 0; n < 3; ++n) docs.push_back({"k"});
  for (int n = 0; n < 5; ++n) docs.push_back({});
  const auto lifts = cplink::compute_lift(two_term_corpus(docs));
  REQUIRE(lifts.n_docs() == 10);
  const auto l = lifts.lift(0, 0);
  REQUIRE(l.has_value());
  CHECK(*l == Catch::Approx(2.0).margin(1e-15));
}

TEST_CASE("lift is undefined when a marginal is zero") {
  const auto lifts = cplink::compute_lift(two_term_corpus({{"k"}, {"k"}}));
  CHECK(!lifts.lift(0, 0).has_value());
  CHECK_THROWS_AS(lifts.lift(1, 0), cplink::validation_error);
}

TEST_CASE("every doc containing both terms gives lift one") {
  Docs docs;
  for (int n = 0; n < 6; ++n) docs.push_back({"j", "k"});
  const auto lifts = cplink::compute_lift(two_term_corpus(docs));
  CHECK(*lifts.lift(0, 0) == Catch::Approx(1.0).margin(1e-15));
  // excluded at alpha = 1 because the comparison is strict
  const auto links = cplink::build_cannot_link(lifts, 1.0, UndefinedLift::exclude);
  CHECK(links.size() == 0);
}

TEST_CASE("build_cannot_link applies a strict threshold") {
  // three column terms against one row term, engineered lifts {0, 1, 2}
  Docs docs;
  docs.push_back({"j", "k1", "k2"});
  docs.push_back({"j", "k1", "k2"});
  docs.push_back({"k0", "k1"});
  docs.push_back({"k0", "k1"});
  // n=4: j in 2; k0 in 2 never with j -> lift 0; k1 in 4 with j twice ->
  // 4*2/(2*4) = 1; k2 in 2 always with j -> 4*2/(2*2) = 2
  const auto corpus = Corpus::from_tokens({"j"}, {"k0", "k1", "k2"}, docs);
  const auto lifts = cplink::compute_lift(corpus);
  CHECK(*lifts.lift(0, 0) == 0.0);
  CHECK(*lifts.lift(0, 1) == 1.0);
  CHECK(*lifts.lift(0, 2) == 2.0);

  const auto links = cplink::build_cannot_link(lifts, 1.0, UndefinedLift::exclude);
  CHECK(links.pairs() == std::vector<std::pair<Index, Index>>{{0, 0}});
}

TEST_CASE("undefined lift policy flag") {
  // k1 never appears: undefined against j
  const auto corpus = Corpus::from_tokens({"j"}, {"k0", "k1"}, {{"j"}, {"k0"}});
  const auto lifts = cplink::compute_lift(corpus);
  CHECK(!lifts.lift(0, 1).has_value());

  const auto excluded = cplink::build_cannot_link(lifts, 1.0, UndefinedLift::exclude);
  CHECK(excluded.pairs() == std::vector<std::pair<Index, Index>>{{0, 0}});
  const auto constrained = cplink::build_cannot_link(lifts, 1.0, UndefinedLift::constrain);
  CHECK(constrained.pairs() ==
        std::vector<std::pair<Index, Index>>{{0, 0}, {0, 1}});
}

TEST_CASE("build_cannot_link rejects nonpositive alpha") {
  const auto lifts = cplink::compute_lift(two_term_corpus({{"j", "k"}}));
  CHECK_THROWS_AS(cplink::build_cannot_link(lifts, 0.0, UndefinedLift::exclude),
                  cplink::validation_error);
}

TEST_CASE("alpha monotonicity on randomized corpora") {
  cplink::Rng rng(71);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::string> rows, cols;
    for (int j = 0; j < 4; ++j) rows.push_back("r" + std::to_string(j));
    for (int k = 0; k < 5; ++k) cols.push_back("c" + std::to_string(k));
    Docs docs;
    for (int d = 0; d < 30; ++d) {
      std::vector<std::string> doc;
      for (const auto& t : rows)
        if (cplink::uniform_unit(rng) < 0.4) doc.push_back(t);
      for (const auto& t : cols)
        if (cplink::uniform_unit(rng) < 0.4) doc.push_back(t);
      docs.push_back(std::move(doc));
    }
    const auto lifts = cplink::compute_lift(Corpus::from_tokens(rows, cols, docs));
    std::vector<std::pair<Index, Index>> previous;
    for (const double alpha : {0.25, 0.5, 1.0, 2.0, 4.0}) {
      const auto links = cplink::build_cannot_link(lifts, alpha, UndefinedLift::exclude);
      CHECK(std::includes(links.pairs().begin(), links.pairs().end(), previous.begin(),
                          previous.end()));
      previous = links.pairs();
    }
  }
}

TEST_CASE("lift is symmetric under swapping the vocabularies") {
  cplink::Rng rng(73);
  std::vector<std::string> rows{"r0", "r1", "r2"}, cols{"c0", "c1"};
  Docs docs;
  for (int d = 0; d < 20; ++d) {
    std::vector<std::string> doc;
    for (const auto& t : rows)
      if (cplink::uniform_unit(rng) < 0.5) doc.push_back(t);
    for (const auto& t : cols)
      if (cplink::uniform_unit(rng) < 0.5) doc.push_back(t);
    docs.push_back(std::move(doc));
  }
  const auto fwd = cplink::compute_lift(Corpus::from_tokens(rows, cols, docs));
  const auto rev = cplink::compute_lift(Corpus::from_tokens(cols, rows, docs));
  for (Index j = 0; j < 3; ++j)
    for (Index k = 0; k < 2; ++k) {
      const auto a = fwd.lift(j, k);
      const auto b = rev.lift(k, j);
      REQUIRE(a.has_value() == b.has_value());
      if (a) CHECK(*a == *b);
    }
}

TEST_CASE("independent sampling drives lift toward one") {
  cplink::Rng rng(79);
  Docs docs;
  for (int d = 0; d < 10000; ++d) {
    std::vector<std::string> doc;
    if (cplink::uniform_unit(rng) < 0.3) doc.push_back("j");
    if (cplink::uniform_unit(rng) < 0.4) doc.push_back("k");
    docs.push_back(std::move(doc));
  }
  const auto lifts = cplink::compute_lift(two_term_corpus(docs));
  const auto l = lifts.lift(0, 0);
  REQUIRE(l.has_value());
  CHECK(*l == Catch::Approx(1.0).margin(0.2));
}

TEST_CASE("joint counts never exceed the marginals") {
  cplink::Rng rng(83);
  std::vector<std::string> rows{"r0", "r1"}, cols{"c0", "c1", "c2"};
  Docs docs;
  for (int d = 0; d < 40; ++d) {
    std::vector<std::string> doc;
    for (const auto& t : rows)
      if (cplink::uniform_unit(rng) < 0.3) doc.push_back(t);
    for (const auto& t : cols)
      if (cplink::uniform_unit(rng) < 0.3) doc.push_back(t);
    docs.push_back(std::move(doc));
  }
  const auto lifts = cplink::compute_lift(Corpus::from_tokens(rows, cols, docs));
  for (Index j = 0; j < 2; ++j)
    for (Index k = 0; k < 3; ++k) {
      CHECK(lifts.joint_count(j, k) <=
            std::min(lifts.row_count(j), lifts.col_count(k)));
      CHECK(lifts.row_count(j) <= lifts.n_docs());
    }
}
