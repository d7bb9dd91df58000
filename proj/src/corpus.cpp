#include "sciedkit/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "sciedkit/errors.hpp"
#include "sciedkit/rng.hpp"

namespace sciedkit {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string stem_of(const std::string& path) {
  size_t slash = path.find_last_of("/\\");
  std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
  const size_t dot = name.find_last_of('.');
  if (dot != std::string::npos && dot > 0) name.erase(dot);
  return name;
}

}  // namespace

DomainTag parse_domain_tag(const std::string& s) {
  if (s == "general") return DomainTag::general;
  if (s == "in_domain") return DomainTag::in_domain;
  if (s == "off_domain") return DomainTag::off_domain;
  if (s == "mixed") return DomainTag::mixed;
  throw InputError("unknown domain tag `" + s +
                   "` (expected general|in_domain|off_domain|mixed)");
}

std::string to_string(DomainTag tag) {
  switch (tag) {
    case DomainTag::general: return "general";
    case DomainTag::in_domain: return "in_domain";
    case DomainTag::off_domain: return "off_domain";
    case DomainTag::mixed: return "mixed";
  }
  return "general";
}

Corpus load_corpus(const std::string& path, DomainTag tag) {
  std::string text = read_file(path);
  // normalize CRLF so the same file yields identical documents either way
  std::string lf;
  lf.reserve(text.size());
  for (char c : text) {
    if (c != '\r') lf.push_back(c);
  }
  Corpus corpus;
  corpus.id = stem_of(path);
  corpus.tag = tag;
  std::string current;
  std::istringstream in(lf);
  std::string line;
  auto flush = [&] {
    const std::string doc = trim(current);
    if (!doc.empty()) corpus.documents.push_back(doc);
    current.clear();
  };
  while (std::getline(in, line)) {
    if (trim(line).empty()) {
      flush();
    } else {
      if (!current.empty()) current.push_back('\n');
      current += line;
    }
  }
  flush();
  if (corpus.documents.empty()) {
    throw InputError("corpus file contains no documents: " + path);
  }
  return corpus;
}

void write_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file: " + path);
  for (const auto& doc : corpus.documents) out << doc << "\n\n";
}

ScoringTask load_scoring_task(const std::string& path) {
  std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  int line_no = 0;

  if (!std::getline(in, line)) throw DataError(path + ": empty task file");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "task_id\tresponse\tlabel") {
    throw DataError(path + ":1: expected header `task_id<TAB>response<TAB>label`, got `" +
                    line + "`");
  }

  struct Row {
    std::string response;
    int raw_label;
  };
  std::vector<Row> rows;
  std::string task_id;
  std::map<std::string, int> first_label_for_response;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const size_t t1 = line.find('\t');
    const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) {
      throw DataError(path + ":" + std::to_string(line_no) + ": missing column (need 3 tab-separated fields)");
    }
    const std::string id = line.substr(0, t1);
    const std::string response = line.substr(t1 + 1, t2 - t1 - 1);
    const std::string label_str = trim(line.substr(t2 + 1));
    if (task_id.empty()) {
      task_id = id;
    } else if (id != task_id) {
      throw DataError(path + ":" + std::to_string(line_no) + ": multiple task ids in one file (`" +
                      task_id + "` vs `" + id + "`)");
    }
    char* end = nullptr;
    const long v = std::strtol(label_str.c_str(), &end, 10);
    if (label_str.empty() || end == label_str.c_str() || *end != '\0') {
      throw DataError(path + ":" + std::to_string(line_no) + ": non-integer label `" + label_str + "`");
    }
    auto [it, inserted] = first_label_for_response.emplace(response, static_cast<int>(v));
    if (!inserted && it->second != v) {
      std::cerr << "warning: " << path << ":" << line_no
                << ": duplicate response with conflicting label (" << it->second << " vs " << v
                << "); keeping both rows\n";
    }
    rows.push_back({response, static_cast<int>(v)});
  }
  if (rows.empty()) throw DataError(path + ": task file has no rows");

  std::set<int> distinct;
  for (const auto& r : rows) distinct.insert(r.raw_label);
  ScoringTask task;
  task.task_id = task_id;
  task.n_classes = static_cast<int>(distinct.size());
  task.original_labels.assign(distinct.begin(), distinct.end());
  std::map<int, int> dense;
  for (size_t i = 0; i < task.original_labels.size(); ++i) {
    dense[task.original_labels[i]] = static_cast<int>(i);
  }
  for (const auto& r : rows) task.examples.emplace_back(r.response, dense[r.raw_label]);
  task.provenance = "loaded from " + path;
  return task;
}

void write_scoring_task(const std::string& path, const ScoringTask& task) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write task file: " + path);
  out << "task_id\tresponse\tlabel\n";
  for (const auto& [response, label] : task.examples) {
    out << task.task_id << "\t" << response << "\t" << label << "\n";
  }
}

SplitIndices split_task(const ScoringTask& task, const std::array<double, 3>& ratios,
                        uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9) {
    throw InputError("split ratios must sum to 1, got " + std::to_string(total));
  }
  std::vector<std::vector<size_t>> by_class(task.n_classes);
  for (size_t i = 0; i < task.examples.size(); ++i) {
    const int label = task.examples[i].second;
    if (label < 0 || label >= task.n_classes) {
      throw DataError("task " + task.task_id + ": label " + std::to_string(label) +
                      " out of range at row " + std::to_string(i + 1));
    }
    by_class[label].push_back(i);
  }

  SplitIndices out;
  for (int c = 0; c < task.n_classes; ++c) {
    auto& members = by_class[c];
    const size_t n = members.size();
    if (n < 4) {
      throw DataError("task " + task.task_id + ": class " + std::to_string(c) + " has only " +
                      std::to_string(n) + " examples, too few to stratify into train/dev/test");
    }
    Rng rng(Rng::mix(seed, Rng::hash_string(task.task_id) ^ static_cast<uint64_t>(c)));
    for (size_t i = n - 1; i > 0; --i) {
      std::swap(members[i], members[rng.below(i + 1)]);
    }
    // largest-remainder allocation with a floor of 1 per part (2 for train)
    size_t counts[3];
    double fracs[3];
    size_t assigned = 0;
    for (int p = 0; p < 3; ++p) {
      const double share = ratios[p] * static_cast<double>(n);
      counts[p] = static_cast<size_t>(share);
      fracs[p] = share - static_cast<double>(counts[p]);
      assigned += counts[p];
    }
    while (assigned < n) {
      int best = 0;
      for (int p = 1; p < 3; ++p) {
        if (fracs[p] > fracs[best] + 1e-12) best = p;
      }
      ++counts[best];
      fracs[best] = -1.0;
      ++assigned;
    }
    auto steal = [&](int needy, size_t need) {
      while (counts[needy] < need) {
        int donor = -1;
        for (int p = 0; p < 3; ++p) {
          const size_t floor_p = p == 0 ? 2 : 1;
          if (p != needy && counts[p] > floor_p && (donor < 0 || counts[p] > counts[donor])) {
            donor = p;
          }
        }
        if (donor < 0) {
          throw DataError("task " + task.task_id + ": class " + std::to_string(c) +
                          " too small to give every split a share");
        }
        --counts[donor];
        ++counts[needy];
      }
    };
    steal(0, 2);
    steal(1, 1);
    steal(2, 1);

    size_t pos = 0;
    for (size_t i = 0; i < counts[0]; ++i) out.train.push_back(members[pos++]);
    for (size_t i = 0; i < counts[1]; ++i) out.dev.push_back(members[pos++]);
    for (size_t i = 0; i < counts[2]; ++i) out.test.push_back(members[pos++]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.dev.begin(), out.dev.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark generation
// ---------------------------------------------------------------------------

void SyntheticBenchmarkSpec::validate() const {
  if (base_vocab < 10 || dialect_a < 10 || dialect_c < 10) {
    throw InputError("benchmark spec error: token budgets too small");
  }
  if (n_categories < 1 || synonyms_per_category < 1) {
    throw InputError("benchmark spec error: need at least one concept category and synonym");
  }
  if (n_categories < n_classes - 1) {
    throw InputError("benchmark spec error: need at least n_classes-1 concept categories");
  }
  const int reserved = n_categories * (synonyms_per_category + carriers_per_category);
  if (dialect_b <= reserved) {
    throw InputError("benchmark spec error: dialect_b budget " + std::to_string(dialect_b) +
                     " cannot hold " + std::to_string(reserved) + " concept/carrier words");
  }
  if (n_classes < 2) throw InputError("benchmark spec error: n_classes must be >= 2");
  if (sentence_min < 2 || sentence_max < sentence_min || response_min < 2 ||
      response_max < response_min) {
    throw InputError("benchmark spec error: bad length distribution");
  }
  if (corpus_a_sentences < 1 || corpus_b_sentences < 1 || corpus_c_sentences < 1 ||
      n_tasks < 1 || examples_per_task < 4 * n_classes) {
    throw InputError("benchmark spec error: corpus or task sizes too small");
  }
  if (carrier_prob < 0.0 || carrier_prob > 1.0) {
    throw InputError("benchmark spec error: carrier_prob outside [0, 1]");
  }
}

namespace {

const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n",
                         "p", "r", "s", "t", "v", "z", "ch", "st"};
const char* kVowels[] = {"a", "e", "i", "o", "u"};

std::string make_word(Rng& rng) {
  const int syllables = 2 + static_cast<int>(rng.below(2));
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    w += kOnsets[rng.below(16)];
    w += kVowels[rng.below(5)];
  }
  if (rng.below(3) == 0) w += kOnsets[rng.below(16)][0];
  return w;
}

std::vector<std::string> draw_words(Rng& rng, int count, std::set<std::string>& used) {
  std::vector<std::string> out;
  out.reserve(count);
  while (static_cast<int>(out.size()) < count) {
    std::string w = make_word(rng);
    if (used.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

const std::string& pick(const std::vector<std::string>& pool, Rng& rng) {
  return pool[rng.below(pool.size())];
}

std::string join_sentence(std::vector<std::string> words) {
  std::string s;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) s.push_back(' ');
    s += words[i];
  }
  s.push_back('.');
  return s;
}

}  // namespace

int concept_label_oracle(const std::string& response,
                         const std::vector<std::vector<std::string>>& categories,
                         int n_classes) {
  std::set<std::string> tokens;
  std::string word;
  for (char c : response) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!word.empty()) {
      tokens.insert(word);
      word.clear();
    }
  }
  if (!word.empty()) tokens.insert(word);

  int present = 0;
  for (const auto& synonyms : categories) {
    for (const auto& s : synonyms) {
      if (tokens.count(s)) {
        ++present;
        break;
      }
    }
  }
  return std::min(n_classes - 1, present);
}

Benchmark generate_benchmark(const SyntheticBenchmarkSpec& spec) {
  spec.validate();
  Benchmark bench;
  bench.spec = spec;

  // token inventories: generated disjoint unless supplied explicitly
  std::vector<std::string> base = spec.words_base;
  std::vector<std::string> words_a = spec.words_a;
  std::vector<std::string> words_b = spec.words_b;
  std::vector<std::string> words_c = spec.words_c;
  auto categories = spec.categories;
  const bool custom = !base.empty() || !words_a.empty() || !words_b.empty() ||
                      !words_c.empty() || !categories.empty();
  Rng word_rng(Rng::mix(spec.seed, 0x1001));
  if (!custom) {
    std::set<std::string> used;
    base = draw_words(word_rng, spec.base_vocab, used);
    words_a = draw_words(word_rng, spec.dialect_a, used);
    const int reserved = spec.n_categories * (spec.synonyms_per_category + spec.carriers_per_category);
    words_b = draw_words(word_rng, spec.dialect_b - reserved, used);
    words_c = draw_words(word_rng, spec.dialect_c, used);
    for (int k = 0; k < spec.n_categories; ++k) {
      categories.push_back(draw_words(word_rng, spec.synonyms_per_category, used));
      bench.carriers.push_back(draw_words(word_rng, spec.carriers_per_category, used));
    }
  } else {
    if (base.empty() || words_a.empty() || words_b.empty() || words_c.empty() ||
        categories.empty()) {
      throw InputError("benchmark spec error: explicit inventories must all be provided together");
    }
    // exclusive sets must be pairwise disjoint outside the shared base
    std::set<std::string> seen;
    auto check = [&seen](const std::vector<std::string>& words, const std::string& name) {
      for (const auto& w : words) {
        if (!seen.insert(w).second) {
          throw InputError("benchmark spec error: dialect token sets overlap on `" + w +
                           "` (" + name + ")");
        }
      }
    };
    check(words_a, "dialect A");
    check(words_b, "dialect B");
    check(words_c, "dialect C");
    for (const auto& cat : categories) check(cat, "concept category");
    for (const auto& w : base) {
      if (seen.count(w)) {
        throw InputError("benchmark spec error: base vocabulary overlaps an exclusive set on `" +
                         w + "`");
      }
    }
    bench.carriers.assign(categories.size(), {});
  }
  bench.categories = categories;

  // corpus A: base + journal dialect
  Rng rng_a(Rng::mix(spec.seed, 0x2001));
  bench.corpus_a.id = "corpus_a";
  bench.corpus_a.tag = DomainTag::general;
  for (int i = 0; i < spec.corpus_a_sentences; ++i) {
    const int len = spec.sentence_min +
                    static_cast<int>(rng_a.below(spec.sentence_max - spec.sentence_min + 1));
    std::vector<std::string> words;
    for (int j = 0; j < len; ++j) {
      words.push_back(rng_a.next_double() < 0.55 ? pick(base, rng_a) : pick(words_a, rng_a));
    }
    bench.corpus_a.documents.push_back(join_sentence(std::move(words)));
  }

  // corpus B: student dialect with concept tokens in carrier contexts
  Rng rng_b(Rng::mix(spec.seed, 0x2002));
  bench.corpus_b.id = "corpus_b";
  bench.corpus_b.tag = DomainTag::in_domain;
  for (int i = 0; i < spec.corpus_b_sentences; ++i) {
    const int len = spec.sentence_min +
                    static_cast<int>(rng_b.below(spec.sentence_max - spec.sentence_min + 1));
    std::vector<std::string> words;
    for (int j = 0; j < len; ++j) {
      const double u = rng_b.next_double();
      if (u < 0.5) {
        words.push_back(pick(base, rng_b));
      } else if (u < 0.8) {
        words.push_back(pick(words_b, rng_b));
      } else {
        const size_t cat = rng_b.below(categories.size());
        if (!bench.carriers[cat].empty() && rng_b.next_double() < spec.carrier_prob) {
          words.push_back(pick(bench.carriers[cat], rng_b));
          ++j;
        }
        words.push_back(pick(categories[cat], rng_b));
      }
    }
    bench.corpus_b.documents.push_back(join_sentence(std::move(words)));
  }

  // corpus C: off-domain dialect, no concept tokens at all
  Rng rng_c(Rng::mix(spec.seed, 0x2003));
  bench.corpus_c.id = "corpus_c";
  bench.corpus_c.tag = DomainTag::off_domain;
  for (int i = 0; i < spec.corpus_c_sentences; ++i) {
    const int len = spec.sentence_min +
                    static_cast<int>(rng_c.below(spec.sentence_max - spec.sentence_min + 1));
    std::vector<std::string> words;
    for (int j = 0; j < len; ++j) {
      words.push_back(rng_c.next_double() < 0.55 ? pick(base, rng_c) : pick(words_c, rng_c));
    }
    bench.corpus_c.documents.push_back(join_sentence(std::move(words)));
  }

  // labeled tasks in dialect B; stored label always recomputed by the oracle
  for (int t = 0; t < spec.n_tasks; ++t) {
    Rng rng_t(Rng::mix(spec.seed, 0x3000 + static_cast<uint64_t>(t)));
    ScoringTask task;
    task.task_id = "item_" + std::to_string(t + 1);
    task.n_classes = spec.n_classes;
    for (int c = 0; c < spec.n_classes; ++c) task.original_labels.push_back(c);
    task.provenance = "synthetic benchmark seed " + std::to_string(spec.seed);
    for (int i = 0; i < spec.examples_per_task; ++i) {
      const int want = static_cast<int>(rng_t.below(spec.n_classes));
      int n_cats = want;
      if (want == spec.n_classes - 1 && spec.n_categories > want) {
        n_cats = want + static_cast<int>(rng_t.below(spec.n_categories - want + 1));
      }
      const int len = spec.response_min +
                      static_cast<int>(rng_t.below(spec.response_max - spec.response_min + 1));
      std::vector<std::string> words;
      for (int j = 0; j < len; ++j) {
        words.push_back(rng_t.next_double() < 0.55 ? pick(base, rng_t) : pick(words_b, rng_t));
      }
      std::vector<size_t> order(categories.size());
      for (size_t k = 0; k < order.size(); ++k) order[k] = k;
      for (size_t k = order.size() - 1; k > 0; --k) std::swap(order[k], order[rng_t.below(k + 1)]);
      for (int k = 0; k < n_cats; ++k) {
        const size_t cat = order[static_cast<size_t>(k)];
        const int copies = 1 + static_cast<int>(rng_t.below(2));
        for (int rep = 0; rep < copies; ++rep) {
          const size_t at = rng_t.below(words.size() + 1);
          words.insert(words.begin() + at, pick(categories[cat], rng_t));
          if (!bench.carriers[cat].empty() && rng_t.next_double() < spec.carrier_prob * 0.7) {
            words.insert(words.begin() + at, pick(bench.carriers[cat], rng_t));
          }
        }
      }
      const std::string response = join_sentence(std::move(words));
      const int label = concept_label_oracle(response, categories, spec.n_classes);
      task.examples.emplace_back(response, label);
    }
    bench.tasks.push_back(std::move(task));
  }
  return bench;
}

}  // namespace sciedkit
