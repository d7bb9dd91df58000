#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace sciedkit {

enum class DomainTag { general, in_domain, off_domain, mixed };

DomainTag parse_domain_tag(const std::string& s);
std::string to_string(DomainTag tag);

struct Corpus {
  std::string id;
  std::vector<std::string> documents;
  DomainTag tag = DomainTag::general;
};

// Documents are blank-line separated paragraphs; CRLF is normalized away
// and whitespace-only documents are dropped.
Corpus load_corpus(const std::string& path, DomainTag tag);
void write_corpus(const std::string& path, const Corpus& corpus);

struct ScoringTask {
  std::string task_id;
  std::vector<std::pair<std::string, int>> examples;  // (response, dense label)
  int n_classes = 0;
  std::vector<int> original_labels;  // dense id -> label value found in the file
  std::string provenance;
};

// Tab-separated file with header `task_id<TAB>response<TAB>label`. Labels
// are remapped densely to 0..n_classes-1; the mapping is recorded in
// original_labels. All rows must share one task_id.
ScoringTask load_scoring_task(const std::string& path);
void write_scoring_task(const std::string& path, const ScoringTask& task);

struct SplitIndices {
  std::vector<size_t> train, dev, test;
};

// Stratified per-class split, deterministic for a given seed. Errors if any
// class cannot give every part at least one example or the train part
// fewer than two.
SplitIndices split_task(const ScoringTask& task, const std::array<double, 3>& ratios,
                        uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic domain-shift benchmark. Three disjoint token dialects share a
// base vocabulary: A (journal-like general text), B (student-like responses,
// the only dialect containing concept tokens), C (off-domain). Task labels
// count distinct concept categories present, capped at n_classes-1, so an
// exhaustive oracle can recompute every label from the text alone.
// ---------------------------------------------------------------------------
struct SyntheticBenchmarkSpec {
  int base_vocab = 120;
  int dialect_a = 140;
  int dialect_b = 140;  // includes concept synonyms and carrier words
  int dialect_c = 140;
  int n_categories = 4;
  int synonyms_per_category = 16;
  int carriers_per_category = 4;
  double carrier_prob = 0.6;
  int sentence_min = 6, sentence_max = 14;
  int response_min = 8, response_max = 20;
  int corpus_a_sentences = 20000;
  int corpus_b_sentences = 5000;
  int corpus_c_sentences = 5000;
  int n_tasks = 4;
  int examples_per_task = 750;
  int n_classes = 3;
  uint64_t seed = 42;

  // Explicit inventories, normally left empty and generated from the seed.
  std::vector<std::string> words_base, words_a, words_b, words_c;
  std::vector<std::vector<std::string>> categories;

  void validate() const;
};

struct Benchmark {
  Corpus corpus_a, corpus_b, corpus_c;
  std::vector<ScoringTask> tasks;
  std::vector<std::vector<std::string>> categories;  // synonym sets, for the oracle
  std::vector<std::vector<std::string>> carriers;
  SyntheticBenchmarkSpec spec;
};

Benchmark generate_benchmark(const SyntheticBenchmarkSpec& spec);

// Independent label rule: distinct concept categories whose tokens appear,
// capped at n_classes-1.
int concept_label_oracle(const std::string& response,
                         const std::vector<std::vector<std::string>>& categories,
                         int n_classes);

}  // namespace sciedkit
