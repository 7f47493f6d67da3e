#include <doctest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

// The training-side modules must compile against teacher outputs only: no
// include of the generative domain model, no mention of its types. This keeps
// the trainer honest — it cannot peek at the source distribution it is
// supposedly adapting to through a black box.

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE_MESSAGE(in.good(), "missing source file: ", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::vector<std::string> kTrainerFiles = {
    "include/bbseg/pseudolabel.hpp", "src/pseudolabel.cpp",
    "include/bbseg/refine.hpp",      "src/refine.cpp",
    "include/bbseg/student.hpp",     "src/student.cpp",
};

const std::vector<std::string> kForbidden = {
    "domain.hpp",      "teacher.hpp",   "DomainSpec",  "class_means",
    "class_stddevs",   "class_priors",  "bayes_posterior",
};

}  // namespace

TEST_CASE("trainer modules have no path to the source distribution") {
  const std::string root = std::string(BBSEG_SOURCE_DIR) + "/";
  for (const std::string& rel : kTrainerFiles) {
    const std::string text = slurp(root + rel);
    for (const std::string& token : kForbidden) {
      INFO(rel, " must not mention ", token);
      CHECK(text.find(token) == std::string::npos);
    }
  }
}

TEST_CASE("trainer modules receive probabilities, not parameters") {
  // Spot check: the supervision builders consume ProbabilityMap, which is a
  // plain tensor with no link back to the generating model.
  const std::string root = std::string(BBSEG_SOURCE_DIR) + "/";
  const std::string pseudolabel = slurp(root + "include/bbseg/pseudolabel.hpp");
  CHECK(pseudolabel.find("ProbabilityMap") != std::string::npos);
  const std::string refine = slurp(root + "include/bbseg/refine.hpp");
  CHECK(refine.find("ProbabilityMap") != std::string::npos);
}
