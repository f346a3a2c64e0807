use std::io::Write;

use mpin::stream::{read_file, tumbling_windows, write_csv, RecordFormat, TumblingWindows};
use mpin::synth::{generate_synthetic, SynthConfig};

#[test]
fn csv_file_round_trip_and_windowing() {
    let config = SynthConfig {
        streams: 3,
        length: 30,
        dim: 4,
        window: 5,
        missing_rate: 0.25,
        seed: 2,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stream.csv");
    write_csv(&data, &config.schema(), std::fs::File::create(&path).unwrap()).unwrap();

    let (back, schema) = read_file(&path, RecordFormat::Csv, None).unwrap();
    assert_eq!(schema, config.schema());
    assert_eq!(back, data);

    let windows = tumbling_windows(&back, 5.0).unwrap();
    assert_eq!(windows.len(), 6);
    let dropped: usize = windows.iter().map(|w| w.dropped).sum();
    assert_eq!(windows.iter().map(|w| w.len()).sum::<usize>() + dropped, 90);
}

#[test]
fn ndjson_file_without_timestamps_uses_row_index() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ndjson");
    let mut f = std::fs::File::create(&path).unwrap();
    for i in 0..7 {
        writeln!(f, "{{\"values\":[{i}, null, {}]}}", i * 2).unwrap();
    }
    drop(f);
    let (instances, schema) = read_file(&path, RecordFormat::Ndjson, None).unwrap();
    assert_eq!(schema.dim(), 3);
    let windows = tumbling_windows(&instances, 3.0).unwrap();
    assert_eq!(windows.iter().map(|w| w.len()).collect::<Vec<_>>(), vec![3, 3, 1]);
}

#[test]
fn out_of_order_timestamps_stop_the_stream() {
    let src = "timestamp,a,b\n0,1,2\n5,1,2\n3,1,2\n";
    let (records, _) = mpin::stream::CsvRecords::with_header_schema(src.as_bytes()).unwrap();
    let results: Vec<_> = TumblingWindows::new(records, 2.0).unwrap().collect();
    assert!(results.iter().any(|r| matches!(r, Err(mpin::Error::Ingestion(_)))));
}

#[test]
fn bad_number_reports_its_line() {
    let src = "a,b\n1,2\n3,oops\n";
    let (records, _) = mpin::stream::CsvRecords::with_header_schema(src.as_bytes()).unwrap();
    let err = records.collect::<mpin::Result<Vec<_>>>().unwrap_err();
    assert!(matches!(err, mpin::Error::Parse { line: 3, .. }), "{err:?}");
}
