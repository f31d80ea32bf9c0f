#pragma once

// Algorithmic task corpus: vocabulary, the eight tasks at three levels,
// deterministic example generation and batching.
//
// Every example is rendered as "TASK input = output". Numbers carry no
// leading zeros, tokens are separated by single spaces.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "emlab/rng.hpp"

namespace emlab {

class CorpusError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

// Token ids: PAD=0, BOS=1, EOS=2, '0'..'9' = 3..12, 'A'..'Z' = 13..38,
// ' ' = 39, '=' = 40. The ordering is fixed; checkpoints depend on it.
class Vocabulary {
 public:
  static constexpr int kSize = 41;
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSpace = 39;
  static constexpr int kEquals = 40;

  Vocabulary() {
    id_of_.fill(-1);
    tokens_ = {"<pad>", "<bos>", "<eos>"};
    for (char c = '0'; c <= '9'; ++c) add(c);
    for (char c = 'A'; c <= 'Z'; ++c) add(c);
    add(' ');
    add('=');
  }

  [[nodiscard]] int size() const { return static_cast<int>(tokens_.size()); }

  [[nodiscard]] std::optional<int> id(char c) const {
    const int v = id_of_[static_cast<unsigned char>(c)];
    if (v < 0) return std::nullopt;
    return v;
  }

  [[nodiscard]] std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    out.reserve(text.size());
    for (char c : text) {
      auto v = id(c);
      if (!v) throw CorpusError(std::string("character not in vocabulary: '") + c + "'");
      out.push_back(*v);
    }
    return out;
  }

  /// Specials decode to nothing; printable ids decode to their character.
  [[nodiscard]] std::string decode(std::span<const int> ids) const {
    std::string out;
    for (int v : ids) {
      if (v < 0 || v >= size()) throw CorpusError("token id out of range: " + std::to_string(v));
      if (v >= 3) out.push_back(tokens_[v][0]);
    }
    return out;
  }

  [[nodiscard]] const std::string& token(int v) const { return tokens_.at(static_cast<std::size_t>(v)); }
  [[nodiscard]] static bool is_special(int v) { return v < 3; }

 private:
  void add(char c) {
    id_of_[static_cast<unsigned char>(c)] = size();
    tokens_.emplace_back(1, c);
  }

  std::vector<std::string> tokens_;
  std::array<int, 256> id_of_{};
};

inline const Vocabulary& vocabulary() {
  static const Vocabulary v;
  return v;
}

inline Vocabulary build_vocabulary() { return Vocabulary{}; }

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

enum class Task : int { COPY = 0, REV, CMP, PAR, ADD, MOD, SORT, MUL };
enum class Level : int { L1 = 0, L2, L3 };

inline constexpr std::array<Task, 8> kAllTasks = {Task::COPY, Task::REV, Task::CMP, Task::PAR,
                                                  Task::ADD,  Task::MOD, Task::SORT, Task::MUL};
inline constexpr std::array<Level, 3> kAllLevels = {Level::L1, Level::L2, Level::L3};
inline constexpr int kNumCombos = 24;

inline std::string_view task_name(Task t) {
  static constexpr std::array<std::string_view, 8> names = {"COPY", "REV", "CMP",  "PAR",
                                                            "ADD",  "MOD", "SORT", "MUL"};
  return names[static_cast<int>(t)];
}

inline std::string_view level_name(Level l) {
  static constexpr std::array<std::string_view, 3> names = {"L1", "L2", "L3"};
  return names[static_cast<int>(l)];
}

inline Task parse_task(std::string_view s) {
  for (Task t : kAllTasks)
    if (task_name(t) == s) return t;
  throw CorpusError("unknown task: " + std::string(s));
}

inline Level parse_level(std::string_view s) {
  for (Level l : kAllLevels)
    if (level_name(l) == s) return l;
  throw CorpusError("unknown level: " + std::string(s));
}

/// Easy tasks emerge inside the early collapse window; hard ones after it.
inline bool is_hard(Task t) { return t == Task::ADD || t == Task::MOD || t == Task::MUL; }

struct Range {
  int lo;
  int hi;
};

/// Level parameters for one (task, level) combination.
struct TaskSpec {
  Task task = Task::COPY;
  Level level = Level::L1;

  // token count n for COPY/REV/PAR/SORT
  int n = 0;
  // operand ranges for CMP/ADD/MUL
  Range a{0, 0};
  Range b{0, 0};
  // moduli for MOD
  std::vector<int> moduli;

  [[nodiscard]] std::string name() const {
    return std::string(task_name(task)) + "_" + std::string(level_name(level));
  }
};

inline TaskSpec task_spec(Task task, Level level) {
  const int li = static_cast<int>(level);
  if (li < 0 || li > 2 || static_cast<int>(task) < 0 || static_cast<int>(task) > 7)
    throw CorpusError("invalid task/level combination");
  TaskSpec s;
  s.task = task;
  s.level = level;
  constexpr std::array<Range, 3> digits = {Range{0, 9}, Range{10, 99}, Range{100, 999}};
  switch (task) {
    case Task::COPY:
    case Task::REV:
    case Task::SORT:
      s.n = std::array{3, 5, 8}[li];
      s.a = {0, 9};
      break;
    case Task::PAR:
      s.n = std::array{4, 6, 8}[li];
      s.a = {0, 1};
      break;
    case Task::CMP:
    case Task::ADD:
      s.a = digits[li];
      s.b = digits[li];
      break;
    case Task::MUL:
      s.a = std::array{Range{0, 9}, Range{0, 9}, Range{10, 99}}[li];
      s.b = std::array{Range{0, 9}, Range{10, 99}, Range{10, 99}}[li];
      break;
    case Task::MOD:
      s.moduli = std::array{std::vector{2, 3, 5, 7}, std::vector{7, 11, 13}, std::vector{13, 17, 19, 23}}[li];
      break;
  }
  return s;
}

inline TaskSpec task_spec(std::string_view combo) {
  const auto pos = combo.find('_');
  if (pos == std::string_view::npos) throw CorpusError("expected TASK_Lk, got " + std::string(combo));
  return task_spec(parse_task(combo.substr(0, pos)), parse_level(combo.substr(pos + 1)));
}

inline std::vector<TaskSpec> all_task_specs() {
  std::vector<TaskSpec> out;
  for (Task t : kAllTasks)
    for (Level l : kAllLevels) out.push_back(task_spec(t, l));
  return out;
}

// ---------------------------------------------------------------------------
// Examples
// ---------------------------------------------------------------------------

struct Example {
  Task task = Task::COPY;
  Level level = Level::L1;
  std::string prompt;  // "TASK input = "
  std::string answer;
  std::vector<int> tokens;  // BOS + prompt + answer + EOS
  // mask[t] is true when the prediction made at position t (of token t+1)
  // is scored: from the position right after '=' through the last answer
  // character, so targets are the answer characters and the closing EOS.
  std::vector<std::uint8_t> mask;

  [[nodiscard]] std::string text() const { return prompt + answer; }
  [[nodiscard]] int answer_positions() const {
    return static_cast<int>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }
};

namespace detail {

inline std::string join(std::span<const int> xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out.push_back(' ');
    out += std::to_string(xs[i]);
  }
  return out;
}

inline void check_in(int v, Range r, const char* what) {
  if (v < r.lo || v > r.hi) throw CorpusError(std::string(what) + " out of range for level");
}

}  // namespace detail

/// Reference output for a task instance.
inline std::string solve(const TaskSpec& spec, std::span<const int> x) {
  using detail::join;
  switch (spec.task) {
    case Task::COPY:
      return join(x);
    case Task::REV: {
      std::vector<int> r(x.rbegin(), x.rend());
      return join(r);
    }
    case Task::SORT: {
      std::vector<int> r(x.begin(), x.end());
      std::sort(r.begin(), r.end());
      return join(r);
    }
    case Task::PAR: {
      int ones = 0;
      for (int v : x) ones += v;
      return ones % 2 ? "ODD" : "EVEN";
    }
    case Task::CMP:
      return x[0] < x[1] ? "LESS" : (x[0] == x[1] ? "EQUAL" : "GREATER");
    case Task::ADD:
      return std::to_string(x[0] + x[1]);
    case Task::MUL:
      return std::to_string(x[0] * x[1]);
    case Task::MOD:
      return std::to_string(x[0] % x[1]);
  }
  throw CorpusError("unreachable task");
}

inline Example make_example(const TaskSpec& spec, std::string prompt, std::string answer) {
  if (answer.empty()) throw CorpusError("empty answer");
  const auto& vocab = vocabulary();
  Example ex;
  ex.task = spec.task;
  ex.level = spec.level;
  ex.prompt = std::move(prompt);
  ex.answer = std::move(answer);
  ex.tokens.reserve(ex.prompt.size() + ex.answer.size() + 2);
  ex.tokens.push_back(Vocabulary::kBos);
  for (int v : vocab.encode(ex.prompt)) ex.tokens.push_back(v);
  for (int v : vocab.encode(ex.answer)) ex.tokens.push_back(v);
  ex.tokens.push_back(Vocabulary::kEos);
  ex.mask.assign(ex.tokens.size(), 0);
  // position p predicts token p+1; answer tokens occupy [1+|prompt|, 1+|prompt|+|answer|)
  const std::size_t first = ex.prompt.size();  // position of the space after '='
  for (std::size_t p = first; p < ex.tokens.size() - 1; ++p) ex.mask[p] = 1;
  return ex;
}

/// Render a task instance from explicit operands, validating them against the level.
///   COPY/REV/SORT/PAR: the n tokens; CMP/ADD/MUL: {a, b}; MOD: {x, p}.
inline Example render_example(const TaskSpec& spec, std::span<const int> x) {
  switch (spec.task) {
    case Task::COPY:
    case Task::REV:
    case Task::SORT:
    case Task::PAR:
      if (static_cast<int>(x.size()) != spec.n) throw CorpusError("wrong token count for level");
      for (int v : x) detail::check_in(v, spec.a, "token");
      break;
    case Task::CMP:
    case Task::ADD:
    case Task::MUL:
      if (x.size() != 2) throw CorpusError("expected two operands");
      detail::check_in(x[0], spec.a, "first operand");
      detail::check_in(x[1], spec.b, "second operand");
      break;
    case Task::MOD:
      if (x.size() != 2) throw CorpusError("expected x and p");
      if (std::find(spec.moduli.begin(), spec.moduli.end(), x[1]) == spec.moduli.end())
        throw CorpusError("modulus not in level set");
      detail::check_in(x[0], Range{0, 10 * x[1]}, "MOD input");
      break;
  }
  std::string prompt = std::string(task_name(spec.task)) + " " + detail::join(x) + " = ";
  return make_example(spec, std::move(prompt), solve(spec, x));
}

inline std::vector<int> draw_operands(const TaskSpec& spec, Rng& rng) {
  std::vector<int> x;
  switch (spec.task) {
    case Task::COPY:
    case Task::REV:
    case Task::SORT:
    case Task::PAR:
      x.resize(static_cast<std::size_t>(spec.n));
      for (auto& v : x) v = static_cast<int>(rng.uniform_int(spec.a.lo, spec.a.hi));
      break;
    case Task::CMP:
    case Task::ADD:
    case Task::MUL:
      x = {static_cast<int>(rng.uniform_int(spec.a.lo, spec.a.hi)),
           static_cast<int>(rng.uniform_int(spec.b.lo, spec.b.hi))};
      break;
    case Task::MOD: {
      const int p = spec.moduli[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(spec.moduli.size()) - 1))];
      x = {static_cast<int>(rng.uniform_int(0, 10 * p)), p};
      break;
    }
  }
  return x;
}

inline Example generate_example(const TaskSpec& spec, Rng& rng) {
  const auto x = draw_operands(spec, rng);
  return render_example(spec, x);
}

inline Example generate_example(const TaskSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return generate_example(spec, rng);
}

/// Fixed evaluation / diagnostic set; depends only on (spec, n, seed).
inline std::vector<Example> make_fixed_set(const TaskSpec& spec, int n, std::uint64_t seed) {
  if (n < 1) throw CorpusError("fixed set size must be >= 1");
  Rng rng(mix_seed(seed, static_cast<int>(spec.task) + 1, static_cast<int>(spec.level) + 1));
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(generate_example(spec, rng));
  return out;
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

inline constexpr int kMaxSeqLen = 48;

/// Right-padded token matrix with answer mask; row-major, rows x seq_len.
struct Batch {
  int rows = 0;
  int seq_len = 0;
  std::vector<int> tokens;
  std::vector<std::uint8_t> mask;
  std::vector<int> lengths;
  std::vector<Task> tasks;
  std::vector<Level> levels;

  [[nodiscard]] int token(int r, int t) const { return tokens[static_cast<std::size_t>(r * seq_len + t)]; }
  [[nodiscard]] bool masked(int r, int t) const { return mask[static_cast<std::size_t>(r * seq_len + t)] != 0; }
  [[nodiscard]] int masked_count() const {
    return static_cast<int>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }
};

inline Batch make_batch(std::span<const Example> examples, int max_seq_len = kMaxSeqLen) {
  if (examples.empty()) throw CorpusError("empty batch");
  Batch b;
  b.rows = static_cast<int>(examples.size());
  for (const auto& ex : examples) b.seq_len = std::max(b.seq_len, static_cast<int>(ex.tokens.size()));
  if (b.seq_len > max_seq_len)
    throw CorpusError("sequence length " + std::to_string(b.seq_len) + " exceeds max " + std::to_string(max_seq_len));
  b.tokens.assign(static_cast<std::size_t>(b.rows * b.seq_len), Vocabulary::kPad);
  b.mask.assign(b.tokens.size(), 0);
  for (int r = 0; r < b.rows; ++r) {
    const auto& ex = examples[static_cast<std::size_t>(r)];
    std::copy(ex.tokens.begin(), ex.tokens.end(), b.tokens.begin() + r * b.seq_len);
    std::copy(ex.mask.begin(), ex.mask.end(), b.mask.begin() + r * b.seq_len);
    b.lengths.push_back(static_cast<int>(ex.tokens.size()));
    b.tasks.push_back(ex.task);
    b.levels.push_back(ex.level);
  }
  return b;
}

/// Draw a single (task, level) combination uniformly from the 24.
inline TaskSpec draw_combo(Rng& rng) {
  const auto k = static_cast<int>(rng.uniform_int(0, kNumCombos - 1));
  return task_spec(static_cast<Task>(k / 3), static_cast<Level>(k % 3));
}

inline std::vector<Example> sample_training_examples(int batch_size, Rng& rng) {
  if (batch_size < 1) throw CorpusError("batch size must be >= 1");
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) out.push_back(generate_example(draw_combo(rng), rng));
  return out;
}

inline Batch make_training_batch(int batch_size, Rng& rng) {
  const auto ex = sample_training_examples(batch_size, rng);
  return make_batch(ex);
}

/// One line per example: prompt \t answer \t task \t level.
inline void export_fixed_set(std::ostream& os, std::span<const Example> examples) {
  for (const auto& ex : examples)
    os << ex.prompt << '\t' << ex.answer << '\t' << task_name(ex.task) << '\t' << level_name(ex.level) << '\n';
}

}  // namespace emlab
