//! Writes a small synthetic review dataset and prints a few records.

use sparsecbm::data::{generate_dataset, Dataset};

fn main() -> sparsecbm::Result<()> {
    let ds = generate_dataset(7, [200, 50, 50], 4, 3, 5, true)?;
    let dir = std::env::temp_dir().join("sparsecbm-example-data");
    ds.write_dir(&dir)?;
    let back = Dataset::load_dir(&dir)?;
    println!("wrote {} (vocabulary {})", dir.display(), back.vocab.len());
    println!("concepts: {:?}", back.schema.concept_names);

    for rec in back.train.records.iter().take(3) {
        println!("label {} {:?}\n  {}", rec.label, rec.concepts, rec.text);
    }
    // The shifted test split keeps labels but swaps in unseen phrasings.
    println!("shifted test example:\n  {}", back.test.records[0].text);
    Ok(())
}
