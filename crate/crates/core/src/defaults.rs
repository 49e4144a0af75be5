//! The built-in plugin set loaded by [`Context::with_defaults`](crate::Context::with_defaults).

use crate::container::PluginMetadata;

pub fn builtin_plugins() -> Vec<PluginMetadata> {
    let mut plugins = Vec::new();
    plugins.extend(crate::convert::builtin_converters());
    plugins.extend(crate::io::builtin_formats());
    plugins.extend(crate::io::builtin_translators());
    plugins.extend(crate::ops::builtin_ops());
    plugins.extend(crate::modules::builtin_plugins());
    plugins.extend(crate::updater::builtin_plugins());
    plugins.extend(crate::cli::builtin_plugins());
    plugins
}
