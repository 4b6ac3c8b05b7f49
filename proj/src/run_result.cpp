#include "cimate/run_result.hpp"

#include <istream>
#include <ostream>

#include "cimate/error.hpp"
#include "json.hpp"

namespace cimate {

void write_predictions(std::ostream& out, const RunResult& result) {
  for (const auto& [id, y] : result.predictions) {
    out << nlohmann::json{{"paper_id", id},
                          {"y_pred", y},
                          {"variant", result.variant},
                          {"seed", result.seed},
                          {"split_id", result.split_id}}
               .dump()
        << '\n';
  }
}

RunResult read_predictions(std::istream& in) {
  RunResult r;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      r.variant = j.at("variant").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.split_id = j.at("split_id").get<std::string>();
      r.predictions.emplace_back(j.at("paper_id").get<std::string>(), j.at("y_pred").get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw MalformedDocument("predictions line " + std::to_string(number) + ": " + e.what());
    }
  }
  return r;
}

}  // namespace cimate
