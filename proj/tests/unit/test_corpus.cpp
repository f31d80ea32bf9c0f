#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "emlab/corpus.hpp"

using namespace emlab;

namespace {

// Independent re-derivation of the answer from the rendered prompt text.
std::string reference_answer(const std::string& prompt) {
  std::istringstream in(prompt);
  std::string task;
  in >> task;
  std::vector<long> xs;
  std::string tok;
  while (in >> tok && tok != "=") xs.push_back(std::stol(tok));
  auto join = [](const std::vector<long>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
    return s;
  };
  if (task == "COPY") return join(xs);
  if (task == "REV") return join(std::vector<long>(xs.rbegin(), xs.rend()));
  if (task == "SORT") {
    std::multiset<long> m(xs.begin(), xs.end());
    return join(std::vector<long>(m.begin(), m.end()));
  }
  if (task == "PAR") {
    long s = 0;
    for (long x : xs) s ^= x;
    return s ? "ODD" : "EVEN";
  }
  if (task == "CMP") return xs[0] < xs[1] ? "LESS" : xs[0] > xs[1] ? "GREATER" : "EQUAL";
  if (task == "ADD") return std::to_string(xs[0] + xs[1]);
  if (task == "MUL") return std::to_string(xs[0] * xs[1]);
  if (task == "MOD") {
    long r = xs[0];
    while (r >= xs[1]) r -= xs[1];
    return std::to_string(r);
  }
  return "?";
}

std::vector<long> operands(const std::string& prompt) {
  std::istringstream in(prompt);
  std::string tok;
  in >> tok;
  std::vector<long> xs;
  while (in >> tok && tok != "=") xs.push_back(std::stol(tok));
  return xs;
}

}  // namespace

TEST(Vocabulary, HasFortyOneEntries) {
  const auto v = build_vocabulary();
  EXPECT_EQ(v.size(), 41);
  std::set<char> seen;
  for (int i = 3; i < v.size(); ++i) seen.insert(v.token(i)[0]);
  EXPECT_EQ(seen.size(), 38u);
  for (char c = '0'; c <= '9'; ++c) EXPECT_TRUE(seen.count(c));
  for (char c = 'A'; c <= 'Z'; ++c) EXPECT_TRUE(seen.count(c));
  EXPECT_TRUE(seen.count(' '));
  EXPECT_TRUE(seen.count('='));
  EXPECT_EQ(v.token(Vocabulary::kPad), "<pad>");
  EXPECT_EQ(v.token(Vocabulary::kBos), "<bos>");
  EXPECT_EQ(v.token(Vocabulary::kEos), "<eos>");
}

TEST(Vocabulary, RoundTrip) {
  const auto& v = vocabulary();
  const auto eq = v.encode("=");
  ASSERT_EQ(eq.size(), 1u);
  EXPECT_EQ(v.decode(eq), "=");
  EXPECT_EQ(v.decode(v.encode("ADD 23 45 =")), "ADD 23 45 =");
  EXPECT_THROW(v.encode("add"), CorpusError);
}

TEST(Vocabulary, RoundTripRandomStrings) {
  const auto& v = vocabulary();
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const auto len = rng.uniform_int(0, 40);
    for (int i = 0; i < len; ++i) s.push_back(v.token(static_cast<int>(rng.uniform_int(3, 40)))[0]);
    EXPECT_EQ(v.decode(v.encode(s)), s);
  }
}

TEST(TaskSpec, LevelParameters) {
  EXPECT_EQ(task_spec(Task::MOD, Level::L1).moduli, (std::vector{2, 3, 5, 7}));
  EXPECT_EQ(task_spec(Task::MOD, Level::L2).moduli, (std::vector{7, 11, 13}));
  EXPECT_EQ(task_spec(Task::MOD, Level::L3).moduli, (std::vector{13, 17, 19, 23}));
  EXPECT_EQ(task_spec(Task::PAR, Level::L3).n, 8);
  EXPECT_EQ(task_spec(Task::PAR, Level::L1).n, 4);
  EXPECT_EQ(task_spec(Task::COPY, Level::L2).n, 5);
  EXPECT_EQ(task_spec(Task::SORT, Level::L3).n, 8);
  EXPECT_EQ(task_spec(Task::CMP, Level::L2).a.lo, 10);
  EXPECT_EQ(task_spec(Task::CMP, Level::L3).a.hi, 999);
  EXPECT_EQ(task_spec(Task::MUL, Level::L2).a.hi, 9);
  EXPECT_EQ(task_spec(Task::MUL, Level::L2).b.hi, 99);
  EXPECT_EQ(task_spec("ADD_L3").a.lo, 100);
  EXPECT_THROW(task_spec("ADD_L4"), CorpusError);
  EXPECT_THROW(task_spec("XOR_L1"), CorpusError);
}

TEST(GenerateExample, RenderedExamples) {
  const auto v = [](TaskSpec s, std::vector<int> x) { return render_example(s, x).text(); };
  EXPECT_EQ(v(task_spec(Task::MOD, Level::L1), {10, 7}), "MOD 10 7 = 3");
  EXPECT_EQ(v(task_spec(Task::SORT, Level::L1), {3, 1, 2}), "SORT 3 1 2 = 1 2 3");
  EXPECT_EQ(v(task_spec(Task::CMP, Level::L1), {3, 7}), "CMP 3 7 = LESS");
  EXPECT_EQ(v(task_spec(Task::PAR, Level::L1), {1, 0, 1, 1}), "PAR 1 0 1 1 = ODD");
  EXPECT_EQ(v(task_spec(Task::ADD, Level::L2), {23, 45}), "ADD 23 45 = 68");
  EXPECT_EQ(v(task_spec(Task::MUL, Level::L1), {0, 7}), "MUL 0 7 = 0");
  EXPECT_THROW(render_example(task_spec(Task::MOD, Level::L1), std::vector{10, 11}), CorpusError);
  EXPECT_THROW(render_example(task_spec(Task::MOD, Level::L1), std::vector{71, 7}), CorpusError);
  EXPECT_THROW(render_example(task_spec(Task::COPY, Level::L1), std::vector{1, 2}), CorpusError);
  EXPECT_THROW(render_example(task_spec(Task::CMP, Level::L2), std::vector{3, 50}), CorpusError);
}

TEST(GenerateExample, MaskCoversAnswerAndEos) {
  const auto ex = render_example(task_spec(Task::MOD, Level::L1), std::vector{10, 7});
  // BOS "MOD 10 7 = " "3" EOS
  ASSERT_EQ(ex.tokens.size(), 1 + 11 + 1 + 1u);
  EXPECT_EQ(ex.answer_positions(), 2);
  for (std::size_t p = 0; p < ex.mask.size(); ++p) {
    if (!ex.mask[p]) continue;
    const int target = ex.tokens[p + 1];
    const bool answer_or_eos = p + 1 >= 1 + ex.prompt.size();
    EXPECT_TRUE(answer_or_eos) << p << " target " << target;
  }
  EXPECT_EQ(ex.mask.back(), 0);
}

TEST(GenerateExample, ReferenceImplementationAgrees) {
  const auto& vocab = vocabulary();
  for (const auto& spec : all_task_specs()) {
    Rng rng(mix_seed(2024, static_cast<int>(spec.task), static_cast<int>(spec.level)));
    for (int i = 0; i < 10000; ++i) {
      const auto ex = generate_example(spec, rng);
      ASSERT_EQ(reference_answer(ex.prompt), ex.answer) << ex.text();
      ASSERT_TRUE(ex.prompt.starts_with(std::string(task_name(spec.task)) + " "));
      ASSERT_TRUE(ex.prompt.ends_with(" = "));
      ASSERT_FALSE(ex.answer.empty());
      ASSERT_LE(static_cast<int>(ex.tokens.size()), kMaxSeqLen);
      ASSERT_EQ(vocab.decode(ex.tokens), ex.text());
      const auto xs = operands(ex.prompt);
      if (spec.task == Task::MOD) {
        ASSERT_TRUE(std::count(spec.moduli.begin(), spec.moduli.end(), xs[1]));
        ASSERT_GE(xs[0], 0);
        ASSERT_LE(xs[0], 10 * xs[1]);
      }
      if (spec.task == Task::CMP) ASSERT_TRUE(ex.answer == "LESS" || ex.answer == "EQUAL" || ex.answer == "GREATER");
      if (spec.task == Task::PAR) ASSERT_TRUE(ex.answer == "ODD" || ex.answer == "EVEN");
      // no leading zeros
      for (const auto& part : {ex.prompt, ex.answer}) {
        std::istringstream in(part);
        std::string tok;
        while (in >> tok)
          if (std::isdigit(static_cast<unsigned char>(tok[0])) && tok.size() > 1) ASSERT_NE(tok[0], '0') << ex.text();
      }
    }
  }
}

TEST(GenerateExample, LongestSequenceFits) {
  const auto spec = task_spec(Task::SORT, Level::L3);
  const auto ex = render_example(spec, std::vector{9, 8, 7, 6, 5, 4, 3, 2});
  EXPECT_EQ(ex.tokens.size(), 40u);
  EXPECT_LE(static_cast<int>(ex.tokens.size()), kMaxSeqLen);
}

TEST(TrainingBatch, ShapeAndMask) {
  Rng rng(5);
  const auto b = make_training_batch(64, rng);
  EXPECT_EQ(b.rows, 64);
  EXPECT_LE(b.seq_len, kMaxSeqLen);
  for (int r = 0; r < b.rows; ++r) {
    int masked = 0;
    for (int t = 0; t < b.seq_len; ++t) {
      if (b.token(r, t) == Vocabulary::kPad) EXPECT_FALSE(b.masked(r, t));
      masked += b.masked(r, t);
    }
    EXPECT_GE(masked, 2);
  }
}

TEST(TrainingBatch, Deterministic) {
  Rng a(99), b(99);
  const auto x = make_training_batch(1, a);
  const auto y = make_training_batch(1, b);
  EXPECT_EQ(x.tokens, y.tokens);
  EXPECT_EQ(x.mask, y.mask);
}

TEST(TrainingBatch, UniformCombinationsBinomial) {
  Rng rng(123);
  std::map<std::pair<int, int>, int> counts;
  const int n = 24000;
  const auto ex = sample_training_examples(n, rng);
  for (const auto& e : ex) counts[{static_cast<int>(e.task), static_cast<int>(e.level)}]++;
  ASSERT_EQ(counts.size(), 24u);
  const double p = 1.0 / 24.0;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (const auto& [k, c] : counts) EXPECT_LE(std::abs(c - n * p), 3 * sigma);
}

TEST(TrainingBatch, UniformCombinationsChiSquare) {
  Rng rng(321);
  std::array<int, 24> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto s = draw_combo(rng);
    counts[static_cast<std::size_t>(static_cast<int>(s.task) * 3 + static_cast<int>(s.level))]++;
  }
  double chi2 = 0;
  const double e = n / 24.0;
  for (int c : counts) chi2 += (c - e) * (c - e) / e;
  // chi-square(23) upper 1% point
  EXPECT_LT(chi2, 41.638);
}

TEST(FixedSet, Deterministic) {
  const auto spec = task_spec(Task::ADD, Level::L2);
  const auto a = make_fixed_set(spec, 1000, 7);
  const auto b = make_fixed_set(spec, 1000, 7);
  ASSERT_EQ(a.size(), 1000u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].tokens, b[i].tokens);
  const auto c = make_fixed_set(spec, 1000, 8);
  int same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i].tokens == c[i].tokens;
  EXPECT_LT(same, 100);
  EXPECT_THROW(make_fixed_set(spec, 0, 1), CorpusError);
}

TEST(FixedSet, ModL3Moduli) {
  const auto set = make_fixed_set(task_spec(Task::MOD, Level::L3), 200, 1);
  for (const auto& ex : set) {
    const auto p = operands(ex.prompt)[1];
    EXPECT_TRUE(p == 13 || p == 17 || p == 19 || p == 23);
  }
}

TEST(FixedSet, CopyAnswersEqualInput) {
  for (const auto& ex : make_fixed_set(task_spec(Task::COPY, Level::L3), 5, 2)) {
    const auto in = ex.prompt.substr(5, ex.prompt.size() - 5 - 3);
    EXPECT_EQ(in, ex.answer);
  }
}

TEST(FixedSet, ExportFormat) {
  std::ostringstream os;
  const auto set = make_fixed_set(task_spec(Task::CMP, Level::L1), 3, 4);
  export_fixed_set(os, set);
  std::istringstream in(os.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 3);
    EXPECT_TRUE(line.ends_with("\tCMP\tL1"));
  }
  EXPECT_EQ(lines, 3);
}

TEST(Rng, SplitStreamsDiffer) {
  Rng r(1);
  auto a = r.split(1), b = r.split(2), a2 = r.split(1);
  EXPECT_EQ(a.next(), a2.next());
  EXPECT_NE(a.next(), b.next());
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.uniform_int(-3, 3);
    EXPECT_GE(v, -3);
    EXPECT_LE(v, 3);
  }
}
