#include "cirevl/prompt.hpp"

#include <fstream>
#include <sstream>

#include "cirevl/digest.hpp"
#include "cirevl/serialization.hpp"

namespace cirevl {

const std::string_view kDefaultBasePrompt =
    "I have an image. Given an instruction to edit the image, carefully generate a description "
    "of the edited image. I will put my image content beginning with 'Image Content:'. The "
    "instruction I provide will begin with 'Instruction:'. The edited description you generate "
    "should begin with 'Edited Description:'. Each time generate one instruction and one edited "
    "description only.";

const std::string_view kDefaultBasePromptSha256 =
    "3f1e3b341f5432b3c39cd67057e0e5fa5bf440e83d75f13f3cea8090460dca26";

void PromptTemplate::validate() const {
  if (template_id.empty()) throw Error(ErrorCode::kInvalidArgument, "template_id is empty");
  if (base_prompt.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "template '" + template_id + "' has an empty base prompt");
  }
  if (caption_marker.empty() || instruction_marker.empty() || reply_marker.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "template '" + template_id + "' has an empty marker");
  }
}

std::string build_reasoner_request(const PromptTemplate& tmpl, std::string_view caption,
                                   std::string_view instruction) {
  const std::string c = single_line(caption);
  const std::string t = single_line(instruction);
  if (c.empty()) throw Error(ErrorCode::kInvalidArgument, "caption must be nonempty");
  if (t.empty()) throw Error(ErrorCode::kInvalidArgument, "instruction must be nonempty");

  std::string out = tmpl.base_prompt;
  out += '\n';
  for (const auto& ex : tmpl.icl_examples) {
    out += tmpl.caption_marker + " " + single_line(ex.caption) + "\n";
    out += tmpl.instruction_marker + " " + single_line(ex.instruction) + "\n";
    out += tmpl.reply_marker + " " + single_line(ex.edited_description) + "\n";
  }
  out += tmpl.caption_marker + " " + c + "\n";
  out += tmpl.instruction_marker + " " + t;
  return out;
}

ParsedReply parse_edited_description(std::string_view reply, const PromptTemplate& tmpl) {
  ParsedReply parsed;
  const auto pos = reply.rfind(tmpl.reply_marker);
  if (pos == std::string_view::npos) {
    parsed.marker_missing = true;
    parsed.text = single_line(reply);
  } else {
    parsed.text = single_line(reply.substr(pos + tmpl.reply_marker.size()));
  }
  if (parsed.text.empty()) {
    throw Error(ErrorCode::kEmptyModelOutput, "reasoner reply has no edited description");
  }
  return parsed;
}

namespace {

std::string_view genecis_directive(TaskKind task) {
  switch (task) {
    case TaskKind::kGenecisFocusAttribute:
      return "Keep the attribute mentioned in the instruction and describe the image focusing on it.";
    case TaskKind::kGenecisChangeAttribute:
      return "Change the attribute of the image to the one in the instruction.";
    case TaskKind::kGenecisFocusObject:
      return "Keep the object mentioned in the instruction in the description.";
    case TaskKind::kGenecisChangeObject:
      return "Replace the corresponding object in the image with the one in the instruction.";
    default:
      return {};
  }
}

}  // namespace

PromptTemplate task_template(TaskKind task) {
  if (task == TaskKind::kDomainConversion) {
    throw Error(ErrorCode::kUnsupportedTask, "domain-conversion does not use a reasoner template");
  }
  PromptTemplate tmpl;
  tmpl.template_id = std::string(to_string(task));
  tmpl.base_prompt = std::string(kDefaultBasePrompt);
  if (const auto directive = genecis_directive(task); !directive.empty()) {
    tmpl.base_prompt += " ";
    tmpl.base_prompt += directive;
  }
  return tmpl;
}

std::string template_target(TemplateKind kind, std::string_view caption,
                            std::string_view instruction_or_domain) {
  const std::string c = single_line(caption);
  const std::string w = single_line(instruction_or_domain);
  if (c.empty()) throw Error(ErrorCode::kInvalidArgument, "caption must be nonempty");
  if (w.empty()) {
    throw Error(ErrorCode::kInvalidArgument, kind == TemplateKind::kDomainConversion
                                                 ? "domain word must be nonempty"
                                                 : "instruction must be nonempty");
  }
  if (kind == TemplateKind::kDomainConversion) return "a " + w + " of a " + c;
  return "a photo of " + c + " that " + w;
}

TemplateSet::TemplateSet() {
  for (TaskKind task : {TaskKind::kCir, TaskKind::kGenecisFocusAttribute,
                        TaskKind::kGenecisChangeAttribute, TaskKind::kGenecisFocusObject,
                        TaskKind::kGenecisChangeObject}) {
    put(task_template(task));
  }
}

void TemplateSet::put(PromptTemplate tmpl) {
  tmpl.validate();
  auto id = tmpl.template_id;
  templates_.insert_or_assign(std::move(id), std::move(tmpl));
}

const PromptTemplate& TemplateSet::get(const std::string& template_id) const {
  const auto it = templates_.find(template_id);
  if (it == templates_.end()) {
    throw Error(ErrorCode::kInvalidArgument, "unknown template id '" + template_id + "'");
  }
  return it->second;
}

const PromptTemplate& TemplateSet::for_task(TaskKind task) const {
  if (task == TaskKind::kDomainConversion) {
    throw Error(ErrorCode::kUnsupportedTask, "domain-conversion does not use a reasoner template");
  }
  return get(std::string(to_string(task)));
}

TemplateSet TemplateSet::load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open template manifest " + manifest_path.string());
  Json manifest;
  try {
    manifest = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kParseError, manifest_path.string() + ": " + e.what());
  }

  TemplateSet set;
  const auto dir = manifest_path.parent_path();
  for (const auto& entry : manifest.at("templates")) {
    PromptTemplate tmpl;
    tmpl.template_id = entry.at("template_id").get<std::string>();
    const auto file = dir / entry.at("file").get<std::string>();
    std::ifstream text_in(file, std::ios::binary);
    if (!text_in) throw Error(ErrorCode::kIoError, "cannot open template file " + file.string());
    std::stringstream buf;
    buf << text_in.rdbuf();
    tmpl.base_prompt = buf.str();
    if (entry.contains("sha256")) {
      const auto expected = entry.at("sha256").get<std::string>();
      const auto actual = sha256_hex(tmpl.base_prompt);
      if (expected != actual) {
        throw Error(ErrorCode::kIntegrityError, "template '" + tmpl.template_id +
                                                    "' checksum mismatch: manifest " + expected +
                                                    ", file " + actual);
      }
    }
    tmpl.caption_marker = entry.value("caption_marker", tmpl.caption_marker);
    tmpl.instruction_marker = entry.value("instruction_marker", tmpl.instruction_marker);
    tmpl.reply_marker = entry.value("reply_marker", tmpl.reply_marker);
    for (const auto& ex : entry.value("icl_examples", Json::array())) {
      tmpl.icl_examples.push_back({ex.at("caption").get<std::string>(),
                                   ex.at("instruction").get<std::string>(),
                                   ex.at("edited_description").get<std::string>()});
    }
    set.put(std::move(tmpl));
  }
  return set;
}

}  // namespace cirevl
