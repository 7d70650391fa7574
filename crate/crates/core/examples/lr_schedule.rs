//! Prints the per-batch learning rate for one epoch of the image and text
//! schedules.

use docfusion::nn::{CosineBatchSchedule, IMAGE_LR_MAX, LR_MIN, TEXT_LR_MAX};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let batches = 10;
    let image = CosineBatchSchedule::new(IMAGE_LR_MAX, LR_MIN, batches)?;
    let text = CosineBatchSchedule::new(TEXT_LR_MAX, LR_MIN, batches)?;
    println!("batch  image      text");
    for k in 0..=batches {
        println!("{k:>5}  {:.3e}  {:.3e}", image.rate(k)?, text.rate(k)?);
    }
    Ok(())
}
