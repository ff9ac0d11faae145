//! The bundled AgentNet menu, its golden renderings, and the frozen
//! 920-record intent dataset.

use crate::datagen::{self, Dataset};
use crate::menu::{self, MenuTree};

pub const AGENTNET_MENU_JSON: &str = include_str!("../fixtures/agentnet.menu.json");
pub const AGENTNET_DESCRIPTIVE: &str = include_str!("../fixtures/agentnet.descriptive.txt");
pub const AGENTNET_PATHS_TSV: &str = include_str!("../fixtures/agentnet.paths.tsv");
pub const AGENTNET_INTENTS_JSONL: &str = include_str!("../fixtures/agentnet.intents.jsonl");

pub fn agentnet_menu() -> MenuTree {
    menu::parse_menu(AGENTNET_MENU_JSON).expect("bundled menu is valid")
}

/// 10 base intents per terminal path, each followed (per path) by three
/// paraphrase rounds.
pub fn agentnet_dataset() -> Dataset {
    let records = datagen::read_jsonl(AGENTNET_INTENTS_JSONL.as_bytes()).expect("bundled dataset parses");
    Dataset {
        menu_name: "AgentNet IVR".to_string(),
        records,
        per_node_base: 10,
        variants_per_base: 3,
    }
}
