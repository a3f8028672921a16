// Regenerates the bundled demo fixtures: a 20-article KB and 20 queries with
// planted answers. Query image vectors are the toy embeddings of the evidence
// abstracts, so retrieval lands on the right article by construction.
// Deterministic: the committed files under data/fixtures/ match its output.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qkf/providers.hpp"

namespace {

using nlohmann::json;

struct Subject {
  std::string adjective;
  std::string noun;
  std::string answer;
  bool year_style;  // established-in questions vs founded-by questions
};

const std::vector<Subject> kSubjects = {
    {"harbor", "lighthouse", "belmora", false},
    {"cedar", "observatory", "carvane", false},
    {"granite", "aqueduct", "delmont", false},
    {"willow", "amphitheater", "ferrow", false},
    {"copper", "foundry", "galvane", false},
    {"marble", "conservatory", "harwick", false},
    {"juniper", "planetarium", "jorveth", false},
    {"basalt", "windmill", "kelsano", false},
    {"lantern", "boathouse", "lurmont", false},
    {"meadow", "apiary", "merrivale", false},
    {"alder", "viaduct", "1811", true},
    {"birch", "tannery", "1823", true},
    {"clover", "gristmill", "1837", true},
    {"damson", "cooperage", "1841", true},
    {"elder", "icehouse", "1853", true},
    {"fennel", "smokehouse", "1859", true},
    {"gorse", "brickworks", "1867", true},
    {"hazel", "chandlery", "1871", true},
    {"ivy", "ropewalk", "1883", true},
    {"laurel", "kiln", "1893", true},
};

std::string two_digits(std::size_t i) {
  std::string s = std::to_string(i);
  return s.size() < 2 ? "0" + s : s;
}

std::string title_case(const std::string& word) {
  std::string out = word;
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::filesystem::path out_dir = argc > 1 ? argv[1] : "data/fixtures";
  const int dim = 64;
  const std::uint64_t seed = 7;
  qkf::providers::ToyProvider provider(dim, seed);

  std::filesystem::create_directories(out_dir);
  std::ofstream kb_out(out_dir / "kb20.jsonl");
  std::ofstream q_out(out_dir / "queries20.jsonl");
  if (!kb_out || !q_out) {
    std::cerr << "cannot open output files under " << out_dir << "\n";
    return 2;
  }

  for (std::size_t i = 0; i < kSubjects.size(); ++i) {
    const Subject& s = kSubjects[i];
    const std::string id = "a" + two_digits(i);
    const std::string name = s.adjective + " " + s.noun;
    const std::string title = "The " + title_case(s.adjective) + " " + title_case(s.noun);
    const std::string abstract = "The " + name + " landmark" + two_digits(i) +
                                 " stands near region" + two_digits(i) +
                                 " and draws steady visitors all year.";

    const std::string overview =
        "the site covers several acres of parkland with quiet paths and gardens kept by local "
        "volunteers across many seasons of careful work.";
    const std::string evidence =
        s.year_style
            ? ("many visitors arrive each season to walk the grounds and rest beside the gates. "
               "the " + name + " was established in " + s.answer +
               " when trade along the valley grew quickly, and records of that era describe "
               "busy markets nearby.")
            : ("many visitors arrive each season to walk the grounds and rest beside the gates. "
               "the " + name + " was founded by " + s.answer +
               " who oversaw its early construction, and records of that era describe busy "
               "markets nearby.");
    const std::string aftermath =
        "later caretakers repaired storm damage and replanted the orchard rows, keeping the "
        "old layout intact for future generations.";

    // Article image: the toy embedding of its own abstract, so image-abstract
    // similarity is meaningful in the shared hashed space.
    const auto img = provider.embed_text(abstract);
    std::vector<double> img_vec(img.data(), img.data() + img.size());

    json rec{{"id", id},
             {"title", title},
             {"abstract", abstract},
             {"image_vec", img_vec},
             {"sections", json::array({json{{"title", "Overview"}, {"text", overview}},
                                       json{{"title", "History"}, {"text", evidence}},
                                       json{{"title", "Preservation"}, {"text", aftermath}}})}};
    kb_out << rec.dump() << '\n';

    const std::string question = s.year_style
                                     ? ("when was the " + name + " established")
                                     : ("who founded the " + name);
    json query{{"qid", "q" + two_digits(i)},
               {"question", question},
               {"image_vec", img_vec},
               {"answers", json::array({s.answer})},
               {"evidence_article_id", id},
               {"evidence_section_index", 1}};
    if (s.year_style) query["numeric_answer"] = std::stod(s.answer);
    q_out << query.dump() << '\n';
  }

  std::cout << "wrote " << (out_dir / "kb20.jsonl").string() << " and "
            << (out_dir / "queries20.jsonl").string() << "\n";
  return 0;
}
