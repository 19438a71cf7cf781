#pragma once

#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "ecorec/domain.hpp"

namespace ecorec {

/// Keyword rules that mark an event name as an energy-saving action.
///
/// A rule's keyword is a phrase of one or more words; it matches when the
/// phrase occurs as a run of whole words in the lower-cased event name, so
/// "off" matches "Turn off light in kitchen" but not "Office lamp". Entries are
/// tried in order and the first match decides the category.
class ActionCatalog {
 public:
  struct Entry {
    std::string keyword;
    ActionCategory category;
  };

  ActionCatalog() = default;
  explicit ActionCatalog(std::vector<Entry> entries);

  static const ActionCatalog& defaults();

  // One "category: keyword phrase" per line; '#' starts a comment.
  static ActionCatalog parse(std::istream& in);

  EventClass classify(std::string_view event_name) const;

  const std::vector<Entry>& entries() const { return entries_; }

 private:
  struct Compiled {
    std::vector<std::string> words;
    ActionCategory category;
  };

  std::vector<Entry> entries_;
  std::vector<Compiled> compiled_;
};

EventClass classify_event(const EventRecord& e, const ActionCatalog& catalog);

// Lower-cased alphanumeric words of `text`.
std::vector<std::string> split_words(std::string_view text);

}  // namespace ecorec
