#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "sciedkit/corpus.hpp"
#include "sciedkit/errors.hpp"

using namespace sciedkit;

namespace {

std::string temp_file(const std::string& name, const std::string& content) {
  const std::string path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path;
}

}  // namespace

TEST_CASE("load_corpus splits documents on blank lines") {
  const std::string path =
      temp_file("sciedkit_corpus1.txt", "first doc line one\nline two\n\nsecond doc\n\n\nthird\n");
  auto corpus = load_corpus(path, DomainTag::general);
  REQUIRE(corpus.documents.size() == 3);
  CHECK(corpus.documents[0] == "first doc line one\nline two");
  CHECK(corpus.documents[1] == "second doc");
  CHECK(corpus.documents[2] == "third");
  CHECK(corpus.tag == DomainTag::general);
  std::filesystem::remove(path);
}

TEST_CASE("load_corpus rejects whitespace-only files") {
  const std::string path = temp_file("sciedkit_corpus2.txt", "  \n\n \t \n");
  CHECK_THROWS_AS(load_corpus(path, DomainTag::general), InputError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.txt", DomainTag::general), IoError);
}

TEST_CASE("load_corpus treats CRLF and LF files identically") {
  const std::string lf = temp_file("sciedkit_corpus_lf.txt", "one two\n\nthree four\n");
  const std::string crlf = temp_file("sciedkit_corpus_crlf.txt", "one two\r\n\r\nthree four\r\n");
  auto a = load_corpus(lf, DomainTag::general);
  auto b = load_corpus(crlf, DomainTag::general);
  CHECK(a.documents == b.documents);
  std::filesystem::remove(lf);
  std::filesystem::remove(crlf);
}

TEST_CASE("load_scoring_task densifies labels and records the mapping") {
  const std::string path = temp_file("sciedkit_task1.tsv",
                                     "task_id\tresponse\tlabel\n"
                                     "q1\tanswer one\t0\n"
                                     "q1\tanswer two\t2\n"
                                     "q1\tanswer three\t2\n"
                                     "q1\tanswer four\t0\n");
  auto task = load_scoring_task(path);
  CHECK(task.task_id == "q1");
  CHECK(task.n_classes == 2);
  CHECK(task.original_labels == std::vector<int>{0, 2});
  CHECK(task.examples.size() == 4);
  CHECK(task.examples[0].second == 0);
  CHECK(task.examples[1].second == 1);  // raw 2 -> dense 1
  std::filesystem::remove(path);
}

TEST_CASE("load_scoring_task error cases carry line numbers") {
  const std::string missing = temp_file("sciedkit_task2.tsv",
                                        "task_id\tresponse\tlabel\n"
                                        "q1\tonly two fields\n");
  CHECK_THROWS_WITH_AS(load_scoring_task(missing), doctest::Contains(":2:"), DataError);
  std::filesystem::remove(missing);

  const std::string bad_label = temp_file("sciedkit_task3.tsv",
                                          "task_id\tresponse\tlabel\n"
                                          "q1\tfine\t1\n"
                                          "q1\tbroken\tabc\n");
  CHECK_THROWS_WITH_AS(load_scoring_task(bad_label), doctest::Contains(":3:"), DataError);
  std::filesystem::remove(bad_label);

  const std::string bad_header = temp_file("sciedkit_task4.tsv", "response\tlabel\nx\t1\n");
  CHECK_THROWS_AS(load_scoring_task(bad_header), DataError);
  std::filesystem::remove(bad_header);
}

TEST_CASE("load_scoring_task keeps conflicting duplicates and counts rows") {
  const std::string path = temp_file("sciedkit_task5.tsv",
                                     "task_id\tresponse\tlabel\n"
                                     "q1\tsame answer\t0\n"
                                     "q1\tsame answer\t1\n"
                                     "q1\tother\t1\n");
  auto task = load_scoring_task(path);
  CHECK(task.examples.size() == 3);  // file rows minus header
  std::filesystem::remove(path);
}

TEST_CASE("scoring task file round trip") {
  ScoringTask task;
  task.task_id = "item_9";
  task.n_classes = 2;
  task.original_labels = {0, 1};
  task.examples = {{"first response", 0}, {"second response", 1}};
  const std::string path =
      (std::filesystem::temp_directory_path() / "sciedkit_task_rt.tsv").string();
  write_scoring_task(path, task);
  auto loaded = load_scoring_task(path);
  CHECK(loaded.task_id == task.task_id);
  CHECK(loaded.examples == task.examples);
  std::filesystem::remove(path);
}

TEST_CASE("split_task produces exact stratified sizes") {
  ScoringTask task;
  task.task_id = "split_test";
  task.n_classes = 2;
  for (int i = 0; i < 50; ++i) task.examples.emplace_back("pos " + std::to_string(i), 0);
  for (int i = 0; i < 50; ++i) task.examples.emplace_back("neg " + std::to_string(i), 1);
  auto split = split_task(task, {0.8, 0.1, 0.1}, 7);
  CHECK(split.train.size() == 80);
  CHECK(split.dev.size() == 10);
  CHECK(split.test.size() == 10);

  auto again = split_task(task, {0.8, 0.1, 0.1}, 7);
  CHECK(split.train == again.train);
  CHECK(split.dev == again.dev);
  CHECK(split.test == again.test);

  // disjoint and exhaustive
  std::set<size_t> all;
  for (auto i : split.train) all.insert(i);
  for (auto i : split.dev) all.insert(i);
  for (auto i : split.test) all.insert(i);
  CHECK(all.size() == 100);
}

TEST_CASE("split_task rejects classes too small to stratify") {
  ScoringTask task;
  task.task_id = "tiny";
  task.n_classes = 2;
  task.examples = {{"a", 0}, {"b", 0}, {"c", 0}, {"d", 0}, {"e", 0}, {"lonely", 1}};
  CHECK_THROWS_AS(split_task(task, {0.8, 0.1, 0.1}, 1), DataError);
  CHECK_THROWS_AS(split_task(task, {0.5, 0.2, 0.2}, 1), InputError);  // ratios sum != 1
}

TEST_CASE("generate_benchmark label rule cases") {
  SyntheticBenchmarkSpec spec;
  spec.corpus_a_sentences = 50;
  spec.corpus_b_sentences = 50;
  spec.corpus_c_sentences = 50;
  spec.n_tasks = 1;
  spec.examples_per_task = 60;
  spec.seed = 5;
  auto bench = generate_benchmark(spec);

  // label 0 base case: no concept tokens
  CHECK(concept_label_oracle("plain words only here", bench.categories, 3) == 0);
  // categories {1,3} of 4 -> 2 distinct -> label 2
  const std::string two_cats =
      bench.categories[1][0] + " filler " + bench.categories[3][2] + ".";
  CHECK(concept_label_oracle(two_cats, bench.categories, 3) == 2);
  // cap: all four categories still label n_classes-1
  std::string all_cats;
  for (const auto& cat : bench.categories) all_cats += cat[0] + " ";
  CHECK(concept_label_oracle(all_cats, bench.categories, 3) == 2);
}

TEST_CASE("generate_benchmark labels always match the oracle") {
  SyntheticBenchmarkSpec spec;
  spec.corpus_a_sentences = 30;
  spec.corpus_b_sentences = 30;
  spec.corpus_c_sentences = 30;
  spec.n_tasks = 2;
  spec.examples_per_task = 100;
  spec.seed = 11;
  auto bench = generate_benchmark(spec);
  for (const auto& task : bench.tasks) {
    for (const auto& [response, label] : task.examples) {
      CHECK(concept_label_oracle(response, bench.categories, spec.n_classes) == label);
    }
  }
}

TEST_CASE("generate_benchmark dialect separation") {
  SyntheticBenchmarkSpec spec;
  spec.corpus_a_sentences = 200;
  spec.corpus_b_sentences = 100;
  spec.corpus_c_sentences = 100;
  spec.n_tasks = 1;
  spec.examples_per_task = 60;
  spec.seed = 3;
  auto bench = generate_benchmark(spec);

  // no B-exclusive token (concept or carrier) may appear in corpus A or C
  std::set<std::string> b_exclusive;
  for (const auto& cat : bench.categories) b_exclusive.insert(cat.begin(), cat.end());
  for (const auto& car : bench.carriers) b_exclusive.insert(car.begin(), car.end());
  for (const auto* corpus : {&bench.corpus_a, &bench.corpus_c}) {
    for (const auto& doc : corpus->documents) {
      std::string word;
      for (char c : doc + " ") {
        if (std::isalpha(static_cast<unsigned char>(c))) {
          word.push_back(c);
        } else if (!word.empty()) {
          CHECK(b_exclusive.count(word) == 0);
          word.clear();
        }
      }
    }
  }
}

TEST_CASE("generate_benchmark determinism") {
  SyntheticBenchmarkSpec spec;
  spec.corpus_a_sentences = 40;
  spec.corpus_b_sentences = 40;
  spec.corpus_c_sentences = 40;
  spec.n_tasks = 2;
  spec.examples_per_task = 50;
  spec.seed = 21;
  auto a = generate_benchmark(spec);
  auto b = generate_benchmark(spec);
  CHECK(a.corpus_a.documents == b.corpus_a.documents);
  CHECK(a.corpus_b.documents == b.corpus_b.documents);
  CHECK(a.corpus_c.documents == b.corpus_c.documents);
  for (size_t t = 0; t < a.tasks.size(); ++t) {
    CHECK(a.tasks[t].examples == b.tasks[t].examples);
  }
}

TEST_CASE("generate_benchmark rejects overlapping explicit sets") {
  SyntheticBenchmarkSpec spec;
  spec.words_base = {"shared"};
  spec.words_a = {"journal", "overlap"};
  spec.words_b = {"student"};
  spec.words_c = {"overlap"};
  spec.categories = {{"concept1"}, {"concept2"}};
  CHECK_THROWS_WITH_AS(generate_benchmark(spec), doctest::Contains("overlap"), InputError);
}

TEST_CASE("domain tags parse and print") {
  CHECK(parse_domain_tag("mixed") == DomainTag::mixed);
  CHECK(to_string(DomainTag::in_domain) == "in_domain");
  CHECK_THROWS_AS(parse_domain_tag("bogus"), InputError);
}
