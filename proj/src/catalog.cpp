#include "ecorec/catalog.hpp"

#include <algorithm>
#include <cctype>

#include "ecorec/error.hpp"

namespace ecorec {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (const char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc)) {
      current.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

ActionCatalog::ActionCatalog(std::vector<Entry> entries) : entries_(std::move(entries)) {
  compiled_.reserve(entries_.size());
  for (const auto& e : entries_) {
    auto words = split_words(e.keyword);
    if (words.empty()) throw Error("invalid_argument", "action catalog keyword is empty");
    compiled_.push_back({std::move(words), e.category});
  }
}

const ActionCatalog& ActionCatalog::defaults() {
  static const ActionCatalog catalog({
      {"absent", ActionCategory::absent},
      {"leave home", ActionCategory::absent},
      {"leaving home", ActionCategory::absent},
      {"sleep", ActionCategory::sleep},
      {"good night", ActionCategory::sleep},
      {"goodnight", ActionCategory::sleep},
      {"standby", ActionCategory::standby},
      {"stand by", ActionCategory::standby},
      {"dim", ActionCategory::dim},
      {"dimmed", ActionCategory::dim},
      {"off", ActionCategory::off},
      {"deep off", ActionCategory::off},
  });
  return catalog;
}

ActionCatalog ActionCatalog::parse(std::istream& in) {
  std::vector<Entry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw Error("invalid_argument", "action catalog line " + std::to_string(line_no) + ": expected 'category: keyword'");
    }
    const auto words = split_words(line.substr(0, colon));
    const auto category = words.size() == 1 ? parse_action_category(words.front()) : std::nullopt;
    if (!category) {
      throw Error("invalid_argument", "action catalog line " + std::to_string(line_no) + ": unknown category");
    }
    entries.push_back({line.substr(colon + 1), *category});
  }
  return ActionCatalog(std::move(entries));
}

EventClass ActionCatalog::classify(std::string_view event_name) const {
  const auto words = split_words(event_name);
  for (const auto& entry : compiled_) {
    const auto it = std::search(words.begin(), words.end(), entry.words.begin(), entry.words.end());
    if (it != words.end()) return EventClass::of(entry.category);
  }
  return EventClass::normal();
}

EventClass classify_event(const EventRecord& e, const ActionCatalog& catalog) {
  return catalog.classify(e.event_name);
}

}  // namespace ecorec
