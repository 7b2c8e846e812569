#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cirevl/types.hpp"

namespace cirevl {

struct IclExample {
  std::string caption;
  std::string instruction;
  std::string edited_description;

  bool operator==(const IclExample&) const = default;
};

struct PromptTemplate {
  std::string template_id;
  std::string base_prompt;
  std::string caption_marker = "Image Content:";
  std::string instruction_marker = "Instruction:";
  std::string reply_marker = "Edited Description:";
  std::vector<IclExample> icl_examples;

  void validate() const;
  bool operator==(const PromptTemplate&) const = default;
};

/// Verbatim base prompt used for plain compositional retrieval.
extern const std::string_view kDefaultBasePrompt;
/// sha256 of kDefaultBasePrompt; the shipped resource file must match it.
extern const std::string_view kDefaultBasePromptSha256;

/// base_prompt, newline, one block per in-context example, then
/// "<caption marker> caption\n<instruction marker> instruction".
/// Throws InvalidArgument on empty caption or instruction.
std::string build_reasoner_request(const PromptTemplate& tmpl, std::string_view caption,
                                   std::string_view instruction);

struct ParsedReply {
  std::string text;
  bool marker_missing = false;
};

/// Text after the last reply marker, trimmed and collapsed onto one line;
/// the whole reply when the marker is absent. Throws EmptyModelOutput.
ParsedReply parse_edited_description(std::string_view reply, const PromptTemplate& tmpl);

/// Built-in template for `task`. Throws UnsupportedTask for domain-conversion.
PromptTemplate task_template(TaskKind task);

enum class TemplateKind { kDomainConversion, kCaptionTemplate };

/// "a {domain} of a {caption}" or "a photo of {caption} that {instruction}".
std::string template_target(TemplateKind kind, std::string_view caption,
                            std::string_view instruction_or_domain);

/// Templates by id, seeded with the built-ins and optionally overlaid from a
/// manifest of text resources whose checksums are verified on load.
class TemplateSet {
 public:
  TemplateSet();

  /// Reads `manifest.json` format: {"templates": [{"template_id", "file",
  /// "sha256", markers..., "icl_examples"}]}. Throws IntegrityError on a
  /// checksum mismatch.
  static TemplateSet load_manifest(const std::filesystem::path& manifest_path);

  const PromptTemplate& get(const std::string& template_id) const;
  bool contains(const std::string& template_id) const { return templates_.count(template_id) != 0; }
  /// Template used for `task` when no explicit template id is configured.
  const PromptTemplate& for_task(TaskKind task) const;
  void put(PromptTemplate tmpl);

 private:
  std::map<std::string, PromptTemplate> templates_;
};

}  // namespace cirevl
